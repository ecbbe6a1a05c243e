use std::io::Read;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use log::{debug, warn};
use tiny_http::{Header, Method, Server, StatusCode};

use super::{Response, Service, MAX_BODY_BYTES};
use crate::error::{Error, Result};

/// A listening HTTP endpoint. Dropping it stops the workers.
pub struct RunningEndpoint {
    server: Arc<Server>,
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    workers: Vec<JoinHandle<()>>,
}

impl RunningEndpoint {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the workers exit, which only happens after `shutdown`.
    pub fn wait(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop_workers();
    }

    fn stop_workers(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for _ in &self.workers {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for RunningEndpoint {
    fn drop(&mut self) {
        self.stop_workers();
    }
}

fn method_name(m: &Method) -> &str {
    match m {
        Method::Get => "GET",
        Method::Post => "POST",
        Method::Put => "PUT",
        Method::Delete => "DELETE",
        Method::Head => "HEAD",
        _ => "OTHER",
    }
}

fn respond(service: &Service, mut rq: tiny_http::Request) {
    let mut body = Vec::new();
    let read = rq.as_reader().take(MAX_BODY_BYTES + 1).read_to_end(&mut body);
    let path = rq.url().split('?').next().unwrap_or("").to_string();
    let reply = match read {
        Err(e) => Response::error(400, format!("unreadable body: {e}")),
        Ok(_) if body.len() as u64 > MAX_BODY_BYTES => Response::error(413, "body too large"),
        Ok(_) => service.handle(method_name(rq.method()), &path, &body),
    };
    debug!("{} {} -> {}", method_name(rq.method()), path, reply.status);
    let header = Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..])
        .expect("static header is valid");
    let out = tiny_http::Response::from_data(reply.body)
        .with_status_code(StatusCode(reply.status))
        .with_header(header);
    if let Err(e) = rq.respond(out) {
        warn!("failed to send response: {e}");
    }
}

/// Binds `addr` (e.g. `127.0.0.1:0`) and answers requests on `threads` workers.
pub fn serve(service: Arc<Service>, addr: &str, threads: usize) -> Result<RunningEndpoint> {
    let server = Arc::new(Server::http(addr).map_err(|e| Error::Endpoint(format!("bind {addr}: {e}")))?);
    let addr = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| Error::Endpoint("server is not bound to an IP address".into()))?;
    let stop = Arc::new(AtomicBool::new(false));
    let workers = (0..threads.max(1))
        .map(|_| {
            let (server, service, stop) = (Arc::clone(&server), Arc::clone(&service), Arc::clone(&stop));
            std::thread::spawn(move || loop {
                match server.recv() {
                    Ok(rq) => respond(&service, rq),
                    Err(_) if stop.load(Ordering::SeqCst) => break,
                    Err(e) => warn!("accept failed: {e}"),
                }
            })
        })
        .collect();
    Ok(RunningEndpoint { server, addr, stop, workers })
}
