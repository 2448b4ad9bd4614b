use crate::{EndpointConfig, Transport, TransportError};
use oai_core::protocol::ChatRequest;
use std::time::Duration;

/// Blocking HTTP transport for `POST {base_url}/chat/completions`.
pub struct HttpTransport {
    agent: ureq::Agent,
}

impl Default for HttpTransport {
    fn default() -> Self {
        HttpTransport { agent: ureq::AgentBuilder::new().build() }
    }
}

impl HttpTransport {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Transport for HttpTransport {
    fn complete(&self, endpoint: &EndpointConfig, request: &ChatRequest) -> Result<String, TransportError> {
        let body = serde_json::to_string(request).map_err(|e| TransportError(e.to_string()))?;
        let mut req = self
            .agent
            .post(&endpoint.completions_url())
            .timeout(Duration::from_secs_f64(endpoint.timeout))
            .set("Content-Type", "application/json");
        if let Some(var) = &endpoint.api_key_env {
            let key =
                std::env::var(var).map_err(|_| TransportError(format!("environment variable {var} is not set")))?;
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        match req.send_string(&body) {
            Ok(resp) => resp.into_string().map_err(|e| TransportError(format!("reading body: {e}"))),
            Err(ureq::Error::Status(code, resp)) => {
                let text = resp.into_string().unwrap_or_default();
                Err(TransportError(format!("HTTP {code}: {}", text.chars().take(200).collect::<String>())))
            }
            Err(e) => Err(TransportError(e.to_string())),
        }
    }
}
