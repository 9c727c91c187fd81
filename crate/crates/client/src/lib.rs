//! Async client for the procgate HTTP API.

use std::collections::VecDeque;
use std::pin::Pin;

use futures::stream::{self, Stream, StreamExt};
use serde::de::DeserializeOwned;
use thiserror::Error;

pub use procgate_core::api::{
    ApprovalRequest, ApprovalResponse, DriverView, ErrorBody, ProcedureView, ServerEvent, StateView,
};
use procgate_core::audit::AuditRecord;
use procgate_core::runtime::{Decision, RiskAssessment};

pub const DEFAULT_URL: &str = "http://127.0.0.1:7878";

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Http(#[from] reqwest::Error),
    #[error("server returned {status}: {} ({})", body.message, body.error)]
    Api { status: u16, body: ErrorBody },
    #[error("malformed payload: {0}")]
    Decode(#[from] serde_json::Error),
    #[error("unknown event type `{0}`")]
    UnknownEvent(String),
}

impl ClientError {
    /// HTTP status for API errors.
    pub fn status(&self) -> Option<u16> {
        match self {
            Self::Api { status, .. } => Some(*status),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

pub type EventStream = Pin<Box<dyn Stream<Item = Result<ServerEvent, ClientError>> + Send>>;

impl Client {
    pub fn new(base_url: &str) -> Self {
        Self {
            base: base_url.trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    async fn decode<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T, ClientError> {
        let status = resp.status();
        let bytes = resp.bytes().await?;
        if !status.is_success() {
            let body = serde_json::from_slice(&bytes).unwrap_or_else(|_| ErrorBody {
                error: "http_error".into(),
                message: String::from_utf8_lossy(&bytes).into_owned(),
            });
            return Err(ClientError::Api {
                status: status.as_u16(),
                body,
            });
        }
        Ok(serde_json::from_slice(&bytes)?)
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        Self::decode(self.http.get(self.url(path)).send().await?).await
    }

    async fn post<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        Self::decode(self.http.post(self.url(path)).send().await?).await
    }

    pub async fn state(&self) -> Result<StateView, ClientError> {
        self.get("/state").await
    }

    pub async fn audit(&self, since: Option<u64>) -> Result<Vec<AuditRecord>, ClientError> {
        match since {
            Some(s) => self.get(&format!("/audit?since={s}")).await,
            None => self.get("/audit").await,
        }
    }

    pub async fn procedure(&self) -> Result<ProcedureView, ClientError> {
        self.get("/procedure").await
    }

    pub async fn approve(&self, approval_id: &str, decision: Decision) -> Result<ApprovalResponse, ClientError> {
        let resp = self
            .http
            .post(self.url(&format!("/approvals/{approval_id}")))
            .json(&ApprovalRequest { decision })
            .send()
            .await?;
        Self::decode(resp).await
    }

    pub async fn run(&self) -> Result<DriverView, ClientError> {
        self.post("/run").await
    }

    pub async fn evaluate(&self) -> Result<RiskAssessment, ClientError> {
        self.post("/evaluate").await
    }

    pub async fn execute(&self) -> Result<DriverView, ClientError> {
        self.post("/execute").await
    }

    /// Audit records after `since`, then live audit and risk events.
    pub async fn events(&self, since: Option<u64>) -> Result<EventStream, ClientError> {
        let path = match since {
            Some(s) => format!("/events?since={s}"),
            None => "/events".to_string(),
        };
        let resp = self.http.get(self.url(&path)).send().await?;
        if !resp.status().is_success() {
            return Err(Self::decode::<serde_json::Value>(resp).await.unwrap_err());
        }
        let bytes = resp.bytes_stream().boxed();
        let init = (bytes, SseParser::default(), VecDeque::new());
        let s = stream::unfold(init, |(mut bytes, mut parser, mut ready)| async move {
            loop {
                if let Some(item) = ready.pop_front() {
                    return Some((item, (bytes, parser, ready)));
                }
                match bytes.next().await {
                    Some(Ok(chunk)) => ready.extend(parser.feed(&chunk)),
                    Some(Err(e)) => return Some((Err(ClientError::Http(e)), (bytes, parser, ready))),
                    None => return None,
                }
            }
        });
        Ok(Box::pin(s))
    }
}

/// Incremental `text/event-stream` decoder.
#[derive(Debug, Default)]
pub struct SseParser {
    buf: String,
    event: Option<String>,
    data: Vec<String>,
}

impl SseParser {
    pub fn feed(&mut self, chunk: &[u8]) -> Vec<Result<ServerEvent, ClientError>> {
        self.buf.push_str(&String::from_utf8_lossy(chunk));
        let mut out = Vec::new();
        while let Some(nl) = self.buf.find('\n') {
            let line: String = self.buf.drain(..=nl).collect();
            let line = line.trim_end_matches(['\n', '\r']);
            if line.is_empty() {
                if let Some(ev) = self.dispatch() {
                    out.push(ev);
                }
                continue;
            }
            if line.starts_with(':') {
                continue;
            }
            let (field, value) = match line.split_once(':') {
                Some((f, v)) => (f, v.strip_prefix(' ').unwrap_or(v)),
                None => (line, ""),
            };
            match field {
                "event" => self.event = Some(value.to_string()),
                "data" => self.data.push(value.to_string()),
                _ => {}
            }
        }
        out
    }

    fn dispatch(&mut self) -> Option<Result<ServerEvent, ClientError>> {
        let name = self.event.take();
        if self.data.is_empty() {
            return None;
        }
        let data = std::mem::take(&mut self.data).join("\n");
        let parsed = match name.as_deref().unwrap_or("message") {
            "audit" => serde_json::from_str(&data)
                .map(ServerEvent::Audit)
                .map_err(ClientError::from),
            "risk" => serde_json::from_str(&data)
                .map(ServerEvent::Risk)
                .map_err(ClientError::from),
            other => Err(ClientError::UnknownEvent(other.to_string())),
        };
        Some(parsed)
    }
}
