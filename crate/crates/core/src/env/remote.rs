//! Wire adapter for remote environments: length-prefixed JSON messages over a
//! byte stream. Requests are `{op, config?, action?}`; responses carry the
//! rendered frame as `{width, height, channels, pixels_base64, digest}`.

use std::io::{Read, Write};
use std::net::TcpStream;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::model::{Action, Observation};

use super::{EnvError, Environment, EnvironmentConfig};

const MAX_FRAME: u32 = 64 * 1024 * 1024;

#[derive(Debug, Serialize, Deserialize)]
struct WireRequest {
    op: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<EnvironmentConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    action: Option<Action>,
}

#[derive(Debug, Serialize, Deserialize)]
struct WireResponse {
    width: u32,
    height: u32,
    channels: u8,
    pixels_base64: String,
    digest: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn write_frame<W: Write>(writer: &mut W, payload: &[u8]) -> std::io::Result<()> {
    writer.write_all(&(payload.len() as u32).to_be_bytes())?;
    writer.write_all(payload)?;
    writer.flush()
}

fn read_frame<R: Read>(reader: &mut R) -> std::io::Result<Vec<u8>> {
    let mut len_buf = [0u8; 4];
    reader.read_exact(&mut len_buf)?;
    let len = u32::from_be_bytes(len_buf);
    if len > MAX_FRAME {
        return Err(std::io::Error::other(format!("frame of {len} bytes exceeds limit")));
    }
    let mut payload = vec![0u8; len as usize];
    reader.read_exact(&mut payload)?;
    Ok(payload)
}

fn encode_observation(obs: &Observation) -> WireResponse {
    WireResponse {
        width: obs.width,
        height: obs.height,
        channels: obs.channels,
        pixels_base64: BASE64.encode(&obs.pixels),
        digest: obs.digest,
        error: None,
    }
}

fn decode_observation(resp: WireResponse) -> Result<Observation, EnvError> {
    if let Some(error) = resp.error {
        return Err(EnvError::Transport(format!("remote error: {error}")));
    }
    let pixels = BASE64
        .decode(resp.pixels_base64.as_bytes())
        .map_err(|e| EnvError::Transport(format!("bad pixel payload: {e}")))?;
    let obs = Observation::new(resp.width, resp.height, resp.channels, pixels)
        .map_err(|e| EnvError::Transport(format!("bad frame shape: {e}")))?;
    if obs.digest != resp.digest {
        return Err(EnvError::Transport(format!(
            "digest mismatch: remote reported {}, frame hashes to {}",
            resp.digest, obs.digest
        )));
    }
    Ok(obs)
}

/// Client side of the wire protocol. Holds one connection and reconnects at
/// most once per request.
pub struct RemoteEnvironment {
    addr: String,
    stream: Option<TcpStream>,
    config: Option<EnvironmentConfig>,
    last: Option<Observation>,
}

impl RemoteEnvironment {
    pub fn connect(addr: impl Into<String>) -> Self {
        RemoteEnvironment { addr: addr.into(), stream: None, config: None, last: None }
    }

    fn ensure_stream(&mut self) -> Result<&mut TcpStream, EnvError> {
        if self.stream.is_none() {
            let stream = TcpStream::connect(&self.addr)
                .map_err(|e| EnvError::Transport(format!("connect {}: {e}", self.addr)))?;
            self.stream = Some(stream);
        }
        Ok(self.stream.as_mut().expect("just connected"))
    }

    fn exchange_once(&mut self, payload: &[u8]) -> Result<WireResponse, EnvError> {
        let stream = self.ensure_stream()?;
        let io = (|| {
            write_frame(stream, payload)?;
            read_frame(stream)
        })();
        match io {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map_err(|e| EnvError::Transport(format!("bad response: {e}"))),
            Err(e) => {
                self.stream = None;
                Err(EnvError::Transport(e.to_string()))
            }
        }
    }

    fn exchange(&mut self, request: &WireRequest) -> Result<Observation, EnvError> {
        let payload = serde_json::to_vec(request)
            .map_err(|e| EnvError::Transport(format!("encode request: {e}")))?;
        let response = match self.exchange_once(&payload) {
            Ok(r) => r,
            // One reconnect attempt, then give up.
            Err(EnvError::Transport(_)) => self.exchange_once(&payload)?,
            Err(e) => return Err(e),
        };
        let obs = decode_observation(response)?;
        self.last = Some(obs.clone());
        Ok(obs)
    }
}

impl Environment for RemoteEnvironment {
    fn reset(&mut self, config: &EnvironmentConfig) -> Result<Observation, EnvError> {
        config.validate()?;
        self.config = Some(config.clone());
        self.exchange(&WireRequest {
            op: "reset".into(),
            config: Some(config.clone()),
            action: None,
        })
    }

    fn step(&mut self, action: &Action) -> Result<Observation, EnvError> {
        if self.config.is_none() {
            return Err(EnvError::NotReset);
        }
        self.exchange(&WireRequest { op: "step".into(), config: None, action: Some(action.clone()) })
    }

    fn render_noisy(&mut self, _step_index: u64) -> Result<Observation, EnvError> {
        // Remote noise is real; the adapter re-reports the last frame.
        self.last.clone().ok_or(EnvError::NotReset)
    }
}

/// Serves the wire protocol over one connection, backed by any local
/// environment. Returns when the peer closes the connection.
pub fn serve_env_connection<E: Environment>(
    stream: &mut TcpStream,
    env: &mut E,
) -> std::io::Result<()> {
    loop {
        let payload = match read_frame(stream) {
            Ok(p) => p,
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(()),
            Err(e) => return Err(e),
        };
        let response = match serde_json::from_slice::<WireRequest>(&payload) {
            Ok(request) => {
                let result = match (request.op.as_str(), request.config, request.action) {
                    ("reset", Some(config), _) => env.reset(&config),
                    ("step", _, Some(action)) => env.step(&action),
                    (op, _, _) => Err(EnvError::Transport(format!("malformed '{op}' request"))),
                };
                match result {
                    Ok(obs) => encode_observation(&obs),
                    Err(e) => WireResponse {
                        width: 0,
                        height: 0,
                        channels: 0,
                        pixels_base64: String::new(),
                        digest: 0,
                        error: Some(e.to_string()),
                    },
                }
            }
            Err(e) => WireResponse {
                width: 0,
                height: 0,
                channels: 0,
                pixels_base64: String::new(),
                digest: 0,
                error: Some(format!("bad request: {e}")),
            },
        };
        let bytes = serde_json::to_vec(&response).expect("response serializes");
        write_frame(stream, &bytes)?;
    }
}
