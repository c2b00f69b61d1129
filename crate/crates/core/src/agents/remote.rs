//! HTTP gateway adapting the five agent roles to a remote endpoint.
//!
//! One POST per call at `/v1/{propose|verify|summarize|evaluate|reason}` with
//! JSON bodies mirroring the operation signatures; observations travel as
//! base64 pixel payloads plus digest. Any LLM endpoint can be adapted by a
//! thin proxy speaking this schema.

use std::io::{Read, Write};
use std::net::TcpStream;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::model::{ExplorationTuple, Observation, Trajectory, VerificationResult};

use super::{
    AgentError, EvaluationAgent, ExplorationAgent, ExplorationContext, HistoryEntry,
    QualityScore, ReasoningAgent, ReasoningChain, ReasoningInput, SummaryAgent, TaskSummary,
    VerificationAgent,
};

#[derive(Debug, Clone)]
pub struct RemoteAgentConfig {
    /// Endpoint root, e.g. `http://127.0.0.1:9100`.
    pub base_url: String,
    pub timeout: Duration,
    pub max_retries: u32,
    /// Upper bound on concurrent in-flight requests across all workers.
    pub max_in_flight: usize,
}

impl RemoteAgentConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        RemoteAgentConfig {
            base_url: base_url.into(),
            timeout: Duration::from_secs(30),
            max_retries: 2,
            max_in_flight: 8,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct WireObservation {
    width: u32,
    height: u32,
    channels: u8,
    pixels_base64: String,
    digest: u64,
}

impl WireObservation {
    fn from_observation(obs: &Observation) -> Self {
        WireObservation {
            width: obs.width,
            height: obs.height,
            channels: obs.channels,
            pixels_base64: BASE64.encode(&obs.pixels),
            digest: obs.digest,
        }
    }

    #[cfg(test)]
    fn into_observation(self) -> Result<Observation, AgentError> {
        let pixels = BASE64
            .decode(self.pixels_base64.as_bytes())
            .map_err(|e| AgentError::Transport(format!("bad pixel payload: {e}")))?;
        Observation::new(self.width, self.height, self.channels, pixels)
            .map_err(|e| AgentError::Transport(format!("bad frame shape: {e}")))
    }
}

#[derive(Serialize, Deserialize)]
struct ProposeRequest {
    observation: WireObservation,
    history: Vec<HistoryEntry>,
    world_knowledge: String,
    prefix_memory_view: Vec<String>,
    k_max: usize,
}

#[derive(Serialize, Deserialize)]
struct ProposeResponse {
    tuples: Vec<ExplorationTuple>,
}

#[derive(Serialize, Deserialize)]
struct VerifyRequest {
    prev: WireObservation,
    tuple: ExplorationTuple,
    actual: WireObservation,
}

#[derive(Serialize, Deserialize)]
struct SummarizeRequest {
    trajectory: Trajectory,
}

#[derive(Serialize, Deserialize)]
struct EvaluateRequest {
    trajectory: Trajectory,
    instruction: String,
}

#[derive(Serialize, Deserialize)]
struct ReasonRequest {
    goal: String,
    observation_digest: u64,
    tuple: ExplorationTuple,
    history: Vec<HistoryEntry>,
    future: Vec<String>,
}

struct Semaphore {
    permits: Mutex<usize>,
    available: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Semaphore { permits: Mutex::new(permits.max(1)), available: Condvar::new() }
    }

    fn acquire(&self) {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.available.wait(permits).unwrap();
        }
        *permits -= 1;
    }

    fn release(&self) {
        *self.permits.lock().unwrap() += 1;
        self.available.notify_one();
    }
}

pub struct RemoteAgentGateway {
    config: RemoteAgentConfig,
    host: String,
    path_prefix: String,
    in_flight: Semaphore,
}

impl RemoteAgentGateway {
    pub fn new(config: RemoteAgentConfig) -> Self {
        let trimmed = config.base_url.trim_end_matches('/');
        let without_scheme = trimmed.strip_prefix("http://").unwrap_or(trimmed);
        let (host, prefix) = match without_scheme.find('/') {
            Some(i) => (without_scheme[..i].to_string(), without_scheme[i..].to_string()),
            None => (without_scheme.to_string(), String::new()),
        };
        let in_flight = Semaphore::new(config.max_in_flight);
        RemoteAgentGateway { config, host, path_prefix: prefix, in_flight }
    }

    fn post_once(&self, path: &str, body: &[u8]) -> Result<(u16, Vec<u8>), AgentError> {
        let transport = |e: std::io::Error| AgentError::Transport(e.to_string());
        let mut stream = TcpStream::connect(&self.host).map_err(transport)?;
        stream.set_read_timeout(Some(self.config.timeout)).map_err(transport)?;
        stream.set_write_timeout(Some(self.config.timeout)).map_err(transport)?;

        let head = format!(
            "POST {}{} HTTP/1.1\r\nHost: {}\r\nContent-Type: application/json\r\n\
             Content-Length: {}\r\nConnection: close\r\n\r\n",
            self.path_prefix,
            path,
            self.host,
            body.len()
        );
        stream.write_all(head.as_bytes()).map_err(transport)?;
        stream.write_all(body).map_err(transport)?;

        let mut raw = Vec::new();
        stream.read_to_end(&mut raw).map_err(transport)?;
        let header_end = raw
            .windows(4)
            .position(|w| w == b"\r\n\r\n")
            .ok_or_else(|| AgentError::Transport("truncated HTTP response".to_string()))?;
        let head_text = String::from_utf8_lossy(&raw[..header_end]);
        let status: u16 = head_text
            .lines()
            .next()
            .and_then(|line| line.split_whitespace().nth(1))
            .and_then(|code| code.parse().ok())
            .ok_or_else(|| AgentError::Transport("malformed status line".to_string()))?;
        Ok((status, raw[header_end + 4..].to_vec()))
    }

    fn post_json<Req: Serialize, Resp: for<'de> Deserialize<'de>>(
        &self,
        path: &str,
        request: &Req,
    ) -> Result<Resp, AgentError> {
        let body = serde_json::to_vec(request)
            .map_err(|e| AgentError::Transport(format!("encode request: {e}")))?;
        self.in_flight.acquire();
        let result = (|| {
            let mut last_err = AgentError::Transport("no attempt made".to_string());
            for _ in 0..=self.config.max_retries {
                match self.post_once(path, &body) {
                    Ok((status, payload)) if (200..300).contains(&status) => {
                        return serde_json::from_slice(&payload).map_err(|e| {
                            AgentError::Transport(format!("decode response: {e}"))
                        });
                    }
                    Ok((status, payload)) if (500..600).contains(&status) => {
                        last_err = AgentError::Transport(format!(
                            "server error {status}: {}",
                            String::from_utf8_lossy(&payload)
                        ));
                    }
                    Ok((status, payload)) => {
                        return Err(AgentError::Transport(format!(
                            "request rejected with status {status}: {}",
                            String::from_utf8_lossy(&payload)
                        )));
                    }
                    Err(e) => last_err = e,
                }
            }
            Err(last_err)
        })();
        self.in_flight.release();
        result
    }
}

impl ExplorationAgent for RemoteAgentGateway {
    fn propose(&self, ctx: &ExplorationContext) -> Result<Vec<ExplorationTuple>, AgentError> {
        let request = ProposeRequest {
            observation: WireObservation::from_observation(&ctx.observation),
            history: ctx.history.clone(),
            world_knowledge: ctx.world_knowledge.clone(),
            prefix_memory_view: ctx.prefix_memory_view.clone(),
            k_max: ctx.k_max,
        };
        let response: ProposeResponse = self.post_json("/v1/propose", &request)?;
        Ok(response.tuples)
    }
}

impl VerificationAgent for RemoteAgentGateway {
    fn verify(
        &self,
        prev: &Observation,
        tuple: &ExplorationTuple,
        actual: &Observation,
    ) -> Result<VerificationResult, AgentError> {
        let request = VerifyRequest {
            prev: WireObservation::from_observation(prev),
            tuple: tuple.clone(),
            actual: WireObservation::from_observation(actual),
        };
        self.post_json("/v1/verify", &request)
    }
}

impl SummaryAgent for RemoteAgentGateway {
    fn summarize(&self, trajectory: &Trajectory) -> Result<TaskSummary, AgentError> {
        self.post_json("/v1/summarize", &SummarizeRequest { trajectory: trajectory.clone() })
    }
}

impl EvaluationAgent for RemoteAgentGateway {
    fn evaluate(
        &self,
        trajectory: &Trajectory,
        instruction: &str,
    ) -> Result<QualityScore, AgentError> {
        self.post_json(
            "/v1/evaluate",
            &EvaluateRequest { trajectory: trajectory.clone(), instruction: instruction.into() },
        )
    }
}

impl ReasoningAgent for RemoteAgentGateway {
    fn synthesize_reasoning(
        &self,
        input: &ReasoningInput<'_>,
    ) -> Result<ReasoningChain, AgentError> {
        self.post_json(
            "/v1/reason",
            &ReasonRequest {
                goal: input.goal.to_string(),
                observation_digest: input.observation_digest,
                tuple: input.tuple.clone(),
                history: input.history.to_vec(),
                future: input.future.to_vec(),
            },
        )
    }
}
