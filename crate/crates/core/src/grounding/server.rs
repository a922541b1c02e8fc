//! `pap-wire/1` HTTP server backed by the oracle.

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;
use std::thread::JoinHandle;

use serde::Serialize;
use tiny_http::{Header, Method, Request, Response, Server};

use super::wire::*;
use super::{Detection, NoiseConfig, OpenVocabularyDetector, OracleMock, PromptableSegmenter, RequestExt, VisionLanguageModel};
use crate::error::{Error, Result};

pub struct MockServer {
    server: Arc<Server>,
    addr: SocketAddr,
    workers: Vec<JoinHandle<()>>,
}

struct Handler {
    oracle: OracleMock,
    token: Option<String>,
}

type Reply = (u16, String);

fn json<T: Serialize>(status: u16, body: &T) -> Reply {
    (status, serde_json::to_string(body).expect("serializable"))
}

fn error(status: u16, msg: impl Into<String>) -> Reply {
    json(status, &ErrorBody { error: msg.into() })
}

fn from_error(e: Error) -> Reply {
    match e {
        Error::UnknownImage(_) => error(404, e.to_string()),
        Error::Backend { status, body } => error(status, body),
        Error::InvalidImage(_) | Error::DimensionMismatch { .. } => error(422, e.to_string()),
        other => error(500, other.to_string()),
    }
}

fn parse<T: serde::de::DeserializeOwned>(body: &str) -> std::result::Result<T, Reply> {
    serde_json::from_str(body).map_err(|e| error(422, format!("schema violation: {e}")))
}

impl Handler {
    fn handle(&self, method: &Method, path: &str, auth: Option<&str>, body: &str) -> Reply {
        if *method == Method::Get && path == HEALTH_PATH {
            return json(
                200,
                &HealthResponse {
                    ok: true,
                    model: Some("oracle".into()),
                },
            );
        }
        if *method != Method::Post {
            return error(405, "method not allowed");
        }
        if let Some(t) = &self.token {
            if auth != Some(format!("Bearer {t}").as_str()) {
                return error(401, "missing or invalid bearer token");
            }
        }
        let r = match path {
            VLM_PATH => self.vlm(body),
            OVD_PATH => self.ovd(body),
            SAM_PATH => self.sam(body),
            _ => return error(404, format!("no endpoint {path}")),
        };
        r.unwrap_or_else(|reply| reply)
    }

    fn vlm(&self, body: &str) -> std::result::Result<Reply, Reply> {
        let req: VlmCompleteRequest = parse(body)?;
        let img = decode_image(&req.image_b64).map_err(from_error)?;
        let ext = RequestExt {
            sample_id: req.sample_id,
            grid: req.grid,
            viewport: None,
        };
        let text = self.oracle.complete(&img, &req.prompt, &ext).map_err(from_error)?;
        Ok(json(200, &VlmCompleteResponse { text }))
    }

    fn ovd(&self, body: &str) -> std::result::Result<Reply, Reply> {
        let req: OvdDetectRequest = parse(body)?;
        let img = decode_image(&req.image_b64).map_err(from_error)?;
        let ext = RequestExt {
            sample_id: req.sample_id,
            grid: None,
            viewport: req.viewport,
        };
        let d = self.oracle.detect(&img, &req.query, &ext).map_err(from_error)?;
        Ok(json(
            200,
            &OvdDetectResponse {
                boxes: d.boxes,
                points: d.points,
                scores: d.scores,
            },
        ))
    }

    fn sam(&self, body: &str) -> std::result::Result<Reply, Reply> {
        let req: SamSegmentRequest = parse(body)?;
        let img = decode_image(&req.image_b64).map_err(from_error)?;
        let ext = RequestExt {
            sample_id: req.sample_id,
            grid: None,
            viewport: req.viewport,
        };
        let det = Detection {
            bbox: req.bbox,
            points: req.points,
            score: 1.0,
            label: String::new(),
        };
        let mask = self.oracle.segment(&img, &det, &ext).map_err(from_error)?;
        let mask_b64 = encode_image(&mask).map_err(from_error)?;
        Ok(json(200, &SamSegmentResponse { mask_b64 }))
    }
}

fn serve_one(handler: &Handler, mut req: Request) {
    let mut body = String::new();
    let (status, text) = if req.as_reader().read_to_string(&mut body).is_err() {
        error(400, "unreadable body")
    } else {
        let auth = req
            .headers()
            .iter()
            .find(|h| h.field.equiv("Authorization"))
            .map(|h| h.value.as_str().to_string());
        let path = req.url().split('?').next().unwrap_or("").to_string();
        handler.handle(req.method(), &path, auth.as_deref(), &body)
    };
    let header = Header::from_bytes("Content-Type", "application/json").expect("static header");
    let resp = Response::from_string(text).with_status_code(status).with_header(header);
    if let Err(e) = req.respond(resp) {
        log::warn!("failed to send response: {e}");
    }
}

impl MockServer {
    /// Binds `addr` (port 0 picks a free port) and starts serving.
    pub fn start(oracle: OracleMock, addr: &str) -> Result<Self> {
        Self::start_with_token(oracle, addr, None)
    }

    /// Like [`MockServer::start`], rejecting requests without the bearer token.
    pub fn start_with_token(oracle: OracleMock, addr: &str, token: Option<String>) -> Result<Self> {
        let server = Server::http(addr).map_err(|e| Error::Io(std::io::Error::other(format!("cannot bind {addr}: {e}"))))?;
        let server = Arc::new(server);
        let local = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| Error::Io(std::io::Error::other("server has no IP address")))?;
        let handler = Arc::new(Handler { oracle, token });
        let n = std::thread::available_parallelism().map_or(4, |n| n.get()).clamp(2, 16);
        let workers = (0..n)
            .map(|_| {
                let (server, handler) = (server.clone(), handler.clone());
                std::thread::spawn(move || {
                    while let Ok(req) = server.recv() {
                        serve_one(&handler, req);
                    }
                })
            })
            .collect();
        Ok(Self {
            server,
            addr: local,
            workers,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        for _ in &self.workers {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }

    /// Blocks until the server stops.
    pub fn wait(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Serves the oracle for `dataset_dir` on `port` until the process exits.
pub fn mock_serve(dataset_dir: &Path, noise: NoiseConfig, port: u16, token: Option<String>) -> Result<()> {
    let oracle = OracleMock::from_dataset(dataset_dir, noise)?;
    let server = MockServer::start_with_token(oracle, &format!("127.0.0.1:{port}"), token)?;
    log::info!("serving {} ({WIRE_VERSION}) at {}", dataset_dir.display(), server.url());
    println!("{}", server.url());
    server.wait();
    Ok(())
}
