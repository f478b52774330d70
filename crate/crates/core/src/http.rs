//! Minimal blocking JSON-over-HTTP client shared by the remote providers.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result, Stage};

#[derive(Debug, Clone)]
pub(crate) struct JsonClient {
    agent: ureq::Agent,
    endpoint: String,
    stage: Stage,
}

impl JsonClient {
    pub(crate) fn new(endpoint: &str, timeout_ms: u64, stage: Stage) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(timeout_ms.max(1))))
            .build()
            .into();
        Self {
            agent,
            endpoint: endpoint.to_owned(),
            stage,
        }
    }

    pub(crate) fn post<B: Serialize, R: DeserializeOwned>(&self, body: &B) -> Result<R> {
        let mut response = self
            .agent
            .post(&self.endpoint)
            .send_json(body)
            .map_err(|e| self.error(format!("POST {}: {e}", self.endpoint)))?;
        response
            .body_mut()
            .read_json::<R>()
            .map_err(|e| self.error(format!("decoding response from {}: {e}", self.endpoint)))
    }

    pub(crate) fn error(&self, message: String) -> Error {
        Error::Provider {
            stage: self.stage,
            message,
        }
    }
}
