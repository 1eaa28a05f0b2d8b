//! The edge half: run head and branch locally, exit where confident, and
//! ship everything else to the tail one stop-and-wait request at a time.

use std::fmt::Write as _;
use std::io::{BufReader, BufWriter};
use std::net::{SocketAddr, TcpStream};
use std::time::Instant;

use super::channel::ChannelModel;
use super::frame::{decode_frame, encode_frame, read_frame, write_frame, Frame};
use super::PipelineError;
use crate::data::Dataset;
use crate::mlp::{Matrix, SparseMlp};
use crate::split::{head_decisions, ExitBranch, ExitPolicy, GateDecision, PipelineMetrics};

/// Where the tail runs.
pub enum TailEndpoint<'a> {
    /// Same process: frames are encoded and decoded but never leave memory.
    InProcess(&'a SparseMlp),
    /// A `serve_tail` server.
    Remote(SocketAddr),
}

/// One sample's transfer record.
#[derive(Clone, Debug, PartialEq)]
pub struct TrafficRow {
    pub sample_id: u64,
    pub exited_locally: bool,
    pub bytes: u64,
    pub modeled_latency_s: f64,
}

/// Per-sample transfer log for a dataset pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrafficLog {
    pub rows: Vec<TrafficRow>,
}

impl TrafficLog {
    pub fn total_bytes(&self) -> u64 {
        self.rows.iter().map(|r| r.bytes).sum()
    }

    pub fn total_modeled_latency_s(&self) -> f64 {
        self.rows.iter().map(|r| r.modeled_latency_s).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample_id,exited_locally,bytes,modeled_latency_s\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                r.sample_id, r.exited_locally, r.bytes, r.modeled_latency_s
            );
        }
        out
    }
}

/// Outcome of an edge pass: the gated metrics (identical to the in-process
/// reference), the per-sample log, and the measured wall time.
pub struct EdgeReport {
    pub metrics: PipelineMetrics,
    pub log: TrafficLog,
    pub wall_s: f64,
}

struct RemoteLink {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl RemoteLink {
    fn connect(addr: SocketAddr) -> std::io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let reader = BufReader::new(stream.try_clone()?);
        Ok(RemoteLink { reader, writer: BufWriter::new(stream) })
    }

    fn exchange(&mut self, frame: &Frame) -> Result<Frame, std::io::Error> {
        write_frame(&mut self.writer, frame)?;
        read_frame(&mut self.reader).map_err(std::io::Error::other)
    }
}

/// Ask the tail for one class, reconnecting once if the link drops
/// mid-sample (resume-at-sample: the same frame is retransmitted).
fn remote_class(
    link: &mut Option<RemoteLink>,
    addr: SocketAddr,
    frame: &Frame,
) -> Result<Frame, PipelineError> {
    for attempt in 0..2 {
        if link.is_none() {
            match RemoteLink::connect(addr) {
                Ok(l) => *link = Some(l),
                Err(_) if attempt == 0 => continue,
                Err(_) => break,
            }
        }
        match link.as_mut().unwrap().exchange(frame) {
            Ok(reply) => return Ok(reply),
            Err(_) => *link = None,
        }
    }
    Err(PipelineError::ConnectionLost { sample_id: frame.sample_id() })
}

/// Run the gated pipeline over `data` from the edge's point of view.
///
/// Decisions are precomputed with the same code path as the in-process
/// reference (`split::evaluate_pipeline`), so both report identical
/// classifications and byte counts; this function adds the per-sample
/// transport, traffic log, and wall-clock measurement.
pub fn run_edge(
    head: &SparseMlp,
    branch: &ExitBranch,
    policy: ExitPolicy,
    data: &Dataset,
    channel: &ChannelModel,
    tail: TailEndpoint<'_>,
) -> Result<EdgeReport, PipelineError> {
    let started = Instant::now();
    let (feats, decisions) = head_decisions(head, branch, policy, data)?;
    let mut metrics = PipelineMetrics {
        samples: data.len(),
        bytes_per_transfer: branch.plan().transfer_bytes(),
        ..Default::default()
    };
    let mut log = TrafficLog { rows: Vec::with_capacity(data.len()) };
    let mut link: Option<RemoteLink> = None;

    for (i, decision) in decisions.iter().enumerate() {
        let sample_id = i as u64;
        match *decision {
            GateDecision::ExitLocal(class) => {
                metrics.exited += 1;
                if class == data.label(i) {
                    metrics.correct_exited += 1;
                }
                log.rows.push(TrafficRow {
                    sample_id,
                    exited_locally: true,
                    bytes: 0,
                    modeled_latency_s: 0.0,
                });
            }
            GateDecision::ContinueRemote => {
                let request = Frame::Activation {
                    sample_id,
                    activation: feats.feature_row(i).to_vec(),
                };
                let bytes = request.encoded_len() as u64;
                debug_assert_eq!(bytes, metrics.bytes_per_transfer);
                let reply = match &tail {
                    TailEndpoint::InProcess(tail_model) => {
                        let wire = encode_frame(&request);
                        let Frame::Activation { activation, .. } = decode_frame(&wire)? else {
                            unreachable!("activation frames decode to activations");
                        };
                        let input = Matrix::from_vec(1, activation.len(), activation);
                        let class = tail_model.predict(&input)?[0] as u16;
                        Frame::Class { sample_id, class }
                    }
                    TailEndpoint::Remote(addr) => remote_class(&mut link, *addr, &request)?,
                };
                let Frame::Class { sample_id: reply_id, class } = reply else {
                    return Err(PipelineError::BadResponse {
                        what: "expected a class response frame",
                    });
                };
                if reply_id != sample_id {
                    return Err(PipelineError::BadResponse {
                        what: "class response for the wrong sample",
                    });
                }
                if class as usize == data.label(i) {
                    metrics.correct_continued += 1;
                }
                log.rows.push(TrafficRow {
                    sample_id,
                    exited_locally: false,
                    bytes,
                    modeled_latency_s: channel.modeled_latency_s(bytes),
                });
            }
        }
    }

    Ok(EdgeReport { metrics, log, wall_s: started.elapsed().as_secs_f64() })
}
