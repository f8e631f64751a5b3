//! Running axum routers on a background thread, plus a conversion helper
//! between axum requests and the plain `http` types the core handlers use.

use std::io;
use std::net::SocketAddr;
use std::sync::mpsc;
use std::thread::JoinHandle;

use axum::body::{Body, Bytes};
use axum::Router;
use tokio::sync::oneshot;

/// Upper bound on request bodies accepted by the adapters.
pub const MAX_BODY_BYTES: usize = 1 << 20;

/// Collects an axum request into an `http::Request<Vec<u8>>`.
pub async fn collect_request(req: axum::extract::Request) -> http::Request<Vec<u8>> {
    let (parts, body) = req.into_parts();
    let bytes = axum::body::to_bytes(body, MAX_BODY_BYTES)
        .await
        .unwrap_or_default();
    http::Request::from_parts(parts, bytes.to_vec())
}

pub fn into_axum_response(resp: http::Response<Vec<u8>>) -> axum::response::Response {
    let (parts, body) = resp.into_parts();
    axum::response::Response::from_parts(parts, Body::from(Bytes::from(body)))
}

/// A router served on its own thread and runtime. Dropping the handle shuts
/// the server down.
pub struct HttpServerHandle {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl HttpServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for HttpServerHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Binds `addr` (port 0 picks a free port) and serves `router` until the
/// handle is dropped.
pub fn spawn_http(router: Router, addr: SocketAddr) -> io::Result<HttpServerHandle> {
    spawn_http_with(addr, move |_| router)
}

/// Like [`spawn_http`], but builds the router once the bound address is
/// known, for services that must advertise their own URL.
pub fn spawn_http_with<F>(addr: SocketAddr, make: F) -> io::Result<HttpServerHandle>
where
    F: FnOnce(SocketAddr) -> Router + Send + 'static,
{
    let (ready_tx, ready_rx) = mpsc::channel::<io::Result<SocketAddr>>();
    let (shutdown_tx, shutdown_rx) = oneshot::channel::<()>();
    let thread = std::thread::Builder::new()
        .name(format!("http-{addr}"))
        .spawn(move || {
            let rt = match tokio::runtime::Builder::new_multi_thread()
                .worker_threads(2)
                .enable_all()
                .build()
            {
                Ok(rt) => rt,
                Err(e) => {
                    let _ = ready_tx.send(Err(e));
                    return;
                }
            };
            rt.block_on(async move {
                let listener = match tokio::net::TcpListener::bind(addr).await {
                    Ok(l) => l,
                    Err(e) => {
                        let _ = ready_tx.send(Err(e));
                        return;
                    }
                };
                let local = match listener.local_addr() {
                    Ok(a) => a,
                    Err(e) => {
                        let _ = ready_tx.send(Err(e));
                        return;
                    }
                };
                let router = make(local);
                let _ = ready_tx.send(Ok(local));
                let _ = axum::serve(listener, router)
                    .with_graceful_shutdown(async {
                        let _ = shutdown_rx.await;
                    })
                    .await;
            });
        })?;
    let addr = ready_rx
        .recv()
        .map_err(|_| io::Error::other("server thread exited before binding"))??;
    Ok(HttpServerHandle {
        addr,
        shutdown: Some(shutdown_tx),
        thread: Some(thread),
    })
}
