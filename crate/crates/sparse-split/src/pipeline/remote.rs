//! The remote half: a TCP server that runs the tail on received
//! activations and answers with the predicted class.

use std::io::{BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use super::frame::{read_frame, write_frame, Frame, FrameError};
use crate::mlp::{Matrix, SparseMlp};

/// Serve `tail` on an already-bound listener until a shutdown frame
/// arrives. Connections are handled concurrently, each sequentially
/// (stop-and-wait per connection). A malformed frame closes only its own
/// connection; the accept loop keeps running.
pub fn serve_tail(tail: &SparseMlp, listener: TcpListener) -> std::io::Result<()> {
    let tail = Arc::new(tail.clone());
    let stop = Arc::new(AtomicBool::new(false));
    let addr = listener.local_addr()?;
    let mut workers: Vec<JoinHandle<()>> = Vec::new();
    loop {
        let (stream, _) = listener.accept()?;
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let tail = Arc::clone(&tail);
        let stop_flag = Arc::clone(&stop);
        workers.push(std::thread::spawn(move || {
            if serve_connection(&tail, stream) {
                stop_flag.store(true, Ordering::SeqCst);
                // Unblock the accept() above so the loop can observe the
                // flag and exit.
                let _ = TcpStream::connect(addr);
            }
        }));
    }
    for w in workers {
        let _ = w.join();
    }
    Ok(())
}

/// Handle one edge connection. Returns true when the peer asked the whole
/// server to shut down.
fn serve_connection(tail: &SparseMlp, stream: TcpStream) -> bool {
    let mut reader = BufReader::new(match stream.try_clone() {
        Ok(s) => s,
        Err(_) => return false,
    });
    let mut writer = BufWriter::new(stream);
    loop {
        match read_frame(&mut reader) {
            Ok(Frame::Activation { sample_id, activation }) => {
                if activation.len() != tail.input_width() {
                    // Wrong shape for this tail: drop the connection, keep
                    // serving others.
                    return false;
                }
                let input = Matrix::from_vec(1, activation.len(), activation);
                let class = match tail.predict(&input) {
                    Ok(p) => p[0] as u16,
                    Err(_) => return false,
                };
                if write_frame(&mut writer, &Frame::Class { sample_id, class }).is_err() {
                    return false;
                }
            }
            Ok(Frame::Shutdown { .. }) => return true,
            // An edge never receives-side sends Class frames; treat as a
            // protocol violation and close.
            Ok(Frame::Class { .. }) => return false,
            Err(FrameError::Closed) => return false,
            Err(_) => return false,
        }
    }
}

/// A background tail server for tests and the in-process side of the CLI.
pub struct TailServerHandle {
    addr: SocketAddr,
    thread: JoinHandle<std::io::Result<()>>,
}

impl TailServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Ask the server to stop and wait for it.
    pub fn shutdown(self) -> std::io::Result<()> {
        let mut stream = TcpStream::connect(self.addr)?;
        write_frame(&mut stream, &Frame::Shutdown { sample_id: 0 })?;
        drop(stream);
        match self.thread.join() {
            Ok(r) => r,
            Err(_) => Err(std::io::Error::other("tail server thread panicked")),
        }
    }
}

/// Bind `addr` (use port 0 for an OS-assigned port) and serve `tail` on a
/// background thread.
pub fn spawn_tail_server<A: ToSocketAddrs>(
    tail: &SparseMlp,
    addr: A,
) -> std::io::Result<TailServerHandle> {
    let listener = TcpListener::bind(addr)?;
    let addr = listener.local_addr()?;
    let tail = tail.clone();
    let thread = std::thread::spawn(move || serve_tail(&tail, listener));
    Ok(TailServerHandle { addr, thread })
}
