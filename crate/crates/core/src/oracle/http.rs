use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use super::{wire, Concurrency, HardLabelOracle, Label};
use crate::error::{Error, Result};
use crate::imaging::Image;

/// Posts one wire request per query to `<base>/classify`.
pub struct HttpOracle {
    url: String,
    token: Option<String>,
    agent: ureq::Agent,
    next_id: AtomicU64,
}

impl HttpOracle {
    /// `base` is the server root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: &str, token: Option<String>, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder().timeout_global(Some(timeout)).build();
        Self {
            url: format!("{}/classify", base.trim_end_matches('/')),
            token,
            agent: config.into(),
            next_id: AtomicU64::new(0),
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

impl HardLabelOracle for HttpOracle {
    fn classify(&self, img: &Image) -> Result<Label> {
        let id = self.next_id.fetch_add(1, Ordering::SeqCst);
        let body = wire::to_line(&wire::Request::new(id, img)?)?;
        let mut req = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(t) = &self.token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        let mut resp = req.send(body).map_err(Error::oracle_io)?;
        let text = resp.body_mut().read_to_string().map_err(Error::oracle_io)?;
        wire::parse_response(&text, id)
    }

    fn concurrency(&self) -> Concurrency {
        Concurrency::Concurrent
    }
}
