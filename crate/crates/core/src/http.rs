//! Blocking JSON-over-HTTP helpers shared by the remote clients.

use std::thread;
use std::time::Duration;

use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub(crate) struct JsonClient {
    agent: ureq::Agent,
    bearer: Option<String>,
}

impl JsonClient {
    pub(crate) fn new(timeout: Duration, bearer: Option<String>) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        JsonClient { agent, bearer }
    }

    pub(crate) fn post(&self, url: &str, body: &Value) -> Result<Value> {
        let mut req = self.agent.post(url);
        if let Some(token) = &self.bearer {
            req = req.set("Authorization", &format!("Bearer {token}"));
        }
        finish(url, req.send_json(body))
    }

    pub(crate) fn get(&self, url: &str, query: &[(&str, &str)]) -> Result<Value> {
        let mut req = self.agent.get(url);
        for (k, v) in query {
            req = req.query(k, v);
        }
        finish(url, req.call())
    }
}

fn finish(url: &str, resp: Result<ureq::Response, ureq::Error>) -> Result<Value> {
    match resp {
        Ok(r) => {
            let status = r.status();
            r.into_json::<Value>().map_err(|e| Error::Service {
                endpoint: url.to_string(),
                status,
                message: format!("unreadable JSON body: {e}"),
            })
        }
        Err(ureq::Error::Status(status, r)) => Err(Error::Service {
            endpoint: url.to_string(),
            status,
            message: r.into_string().unwrap_or_default(),
        }),
        Err(ureq::Error::Transport(t)) => Err(Error::Transport {
            endpoint: url.to_string(),
            message: t.to_string(),
        }),
    }
}

/// Run `op` up to `1 + retries` times, backing off linearly on transient errors.
pub(crate) fn with_retries<T>(retries: u32, mut op: impl FnMut() -> Result<T>) -> Result<T> {
    let mut attempt = 0;
    loop {
        match op() {
            Err(e) if e.is_transient() && attempt < retries => {
                attempt += 1;
                thread::sleep(Duration::from_millis(50 * u64::from(attempt)));
            }
            other => return other,
        }
    }
}

pub(crate) fn join_url(base: &str, path: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), path.trim_start_matches('/'))
}

pub(crate) fn field<'a>(endpoint: &str, v: &'a Value, name: &str) -> Result<&'a Value> {
    v.get(name).ok_or_else(|| Error::Service {
        endpoint: endpoint.to_string(),
        status: 200,
        message: format!("response lacks field {name:?}"),
    })
}
