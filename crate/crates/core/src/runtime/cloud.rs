use std::io::{BufReader, BufWriter};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crate::error::{Error, Result};
use crate::nn::Network;
use crate::runtime::profile::{NetMode, NetProfile};
use crate::runtime::wire::{read_frame, write_frame, WireMessage};
use crate::tensor::Tensor;

/// Teacher-side server. Each connection gets its own thread and is served
/// sequentially; a `Shutdown` message on any connection stops the server.
pub struct CloudServer {
    listener: TcpListener,
    teacher: Arc<Network>,
    profile: NetProfile,
    stop: Arc<AtomicBool>,
}

/// A server running on a background thread.
pub struct CloudHandle {
    pub addr: SocketAddr,
    stop: Arc<AtomicBool>,
    join: Option<JoinHandle<Result<()>>>,
}

impl CloudServer {
    pub fn bind<A: ToSocketAddrs>(teacher: Network, addr: A, profile: NetProfile) -> Result<CloudServer> {
        profile.validate()?;
        Ok(CloudServer {
            listener: TcpListener::bind(addr)?,
            teacher: Arc::new(teacher),
            profile,
            stop: Arc::new(AtomicBool::new(false)),
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    /// Accept connections until a `Shutdown` arrives.
    pub fn serve(self) -> Result<()> {
        let addr = self.local_addr()?;
        let mut workers = Vec::new();
        for conn in self.listener.incoming() {
            if self.stop.load(Ordering::SeqCst) {
                break;
            }
            let stream = match conn {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("cloud: accept failed: {e}");
                    continue;
                }
            };
            let handle = match stream.try_clone() {
                Ok(h) => h,
                Err(e) => {
                    eprintln!("cloud: cannot track connection: {e}");
                    continue;
                }
            };
            let teacher = Arc::clone(&self.teacher);
            let stop = Arc::clone(&self.stop);
            let profile = self.profile;
            let worker = thread::spawn(move || {
                let peer = stream.peer_addr().ok();
                match handle_connection(&teacher, stream, &profile) {
                    Ok(true) => {
                        stop.store(true, Ordering::SeqCst);
                        // Wake the accept loop so it can observe the flag.
                        let _ = TcpStream::connect(addr);
                    }
                    Ok(false) => {}
                    Err(e) => eprintln!("cloud: closing connection {peer:?}: {e}"),
                }
            });
            workers.push((worker, handle));
            workers.retain(|(w, _)| !w.is_finished());
        }
        // Idle clients would otherwise keep their workers blocked in read.
        for (w, stream) in workers {
            let _ = stream.shutdown(Shutdown::Both);
            let _ = w.join();
        }
        Ok(())
    }

    pub fn spawn(self) -> Result<CloudHandle> {
        let addr = self.local_addr()?;
        let stop = Arc::clone(&self.stop);
        let join = thread::spawn(move || self.serve());
        Ok(CloudHandle {
            addr,
            stop,
            join: Some(join),
        })
    }
}

impl CloudHandle {
    /// Send `Shutdown` and wait for the server thread.
    pub fn shutdown(mut self) -> Result<()> {
        self.stop_now()
    }

    fn stop_now(&mut self) -> Result<()> {
        let Some(join) = self.join.take() else {
            return Ok(());
        };
        if !self.stop.load(Ordering::SeqCst) {
            let mut s = TcpStream::connect(self.addr)?;
            write_frame(&mut s, &WireMessage::Shutdown)?;
        }
        join.join().map_err(|_| Error::State("cloud server thread panicked".into()))?
    }
}

impl Drop for CloudHandle {
    fn drop(&mut self) {
        let _ = self.stop_now();
    }
}

/// Returns `Ok(true)` when the peer asked the server to shut down.
fn handle_connection(teacher: &Network, stream: TcpStream, profile: &NetProfile) -> Result<bool> {
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    let rtt = if profile.mode == NetMode::Real && profile.rtt_ms > 0.0 {
        Some(Duration::from_secs_f64(profile.rtt_ms / 1000.0))
    } else {
        None
    };
    while let Some((msg, _)) = read_frame(&mut reader)? {
        match msg {
            WireMessage::InferRequest {
                request_id,
                dims,
                payload,
            } => {
                let predicted_class = infer(teacher, &dims, payload)?;
                if let Some(d) = rtt {
                    thread::sleep(d);
                }
                write_frame(
                    &mut writer,
                    &WireMessage::InferResponse {
                        request_id,
                        predicted_class,
                    },
                )?;
            }
            WireMessage::Shutdown => return Ok(true),
            WireMessage::InferResponse { request_id, .. } => {
                return Err(Error::protocol(6, format!("unexpected response frame (id {request_id})")))
            }
        }
    }
    Ok(false)
}

fn infer(teacher: &Network, dims: &[u32], payload: Vec<f32>) -> Result<u32> {
    let dims: Vec<usize> = dims.iter().map(|&d| d as usize).collect();
    if dims != teacher.input_dims() {
        return Err(Error::input(format!(
            "request dims {dims:?} do not match teacher input {:?}",
            teacher.input_dims()
        )));
    }
    let mut batch = vec![1];
    batch.extend(dims);
    let x = Tensor::new(batch, payload)?;
    Ok(teacher.predict(&x)?[0] as u32)
}
