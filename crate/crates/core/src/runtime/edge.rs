use std::fmt;
use std::io::{BufReader, BufWriter};
use std::net::{TcpStream, ToSocketAddrs};
use std::str::FromStr;
use std::time::Instant;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gate::{gate_decide, GateModel, OffloadDecision};
use crate::nn::Network;
use crate::runtime::profile::{simulate_delay, NetMode, NetProfile};
use crate::runtime::wire::{read_frame, write_frame, WireMessage};
use crate::runtime::BenchReport;
use crate::tensor::{argmax, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Strategy {
    EdgeOnly,
    CloudOnly,
    Cooperation,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::EdgeOnly, Strategy::CloudOnly, Strategy::Cooperation];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::EdgeOnly => "edge_only",
            Strategy::CloudOnly => "cloud_only",
            Strategy::Cooperation => "cooperation",
        }
    }

    pub fn needs_cloud(self) -> bool {
        self != Strategy::EdgeOnly
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "edge" | "edge_only" => Ok(Strategy::EdgeOnly),
            "cloud" | "cloud_only" => Ok(Strategy::CloudOnly),
            "coop" | "cooperation" => Ok(Strategy::Cooperation),
            _ => Err(Error::input(format!("unknown strategy {s:?} (edge, cloud, coop)"))),
        }
    }
}

/// How the edge decides what to offload under cooperation.
#[derive(Clone, Debug)]
pub enum EdgeGate {
    Model(GateModel),
    /// Test utility: offloads exactly the samples the student gets wrong.
    Oracle,
}

/// Blocking client holding one connection to the cloud; one request in
/// flight at a time.
pub struct CloudClient {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    next_id: u64,
}

impl CloudClient {
    pub fn connect<A: ToSocketAddrs + fmt::Debug>(addr: A) -> Result<CloudClient> {
        let stream = TcpStream::connect(&addr)
            .map_err(|e| Error::State(format!("cloud at {addr:?} unreachable: {e}")))?;
        stream.set_nodelay(true)?;
        Ok(CloudClient {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
            next_id: 0,
        })
    }

    /// Teacher prediction for one sample and the bytes exchanged.
    pub fn infer(&mut self, sample: &[f32], dims: &[usize]) -> Result<(usize, usize)> {
        let request_id = self.next_id;
        self.next_id += 1;
        let sent = write_frame(
            &mut self.writer,
            &WireMessage::InferRequest {
                request_id,
                dims: dims.iter().map(|&d| d as u32).collect(),
                payload: sample.to_vec(),
            },
        )?;
        match read_frame(&mut self.reader)? {
            Some((
                WireMessage::InferResponse {
                    request_id: id,
                    predicted_class,
                },
                received,
            )) => {
                if id != request_id {
                    return Err(Error::protocol(7, format!("response id {id} does not match request {request_id}")));
                }
                Ok((predicted_class as usize, sent + received))
            }
            Some((other, _)) => Err(Error::protocol(6, format!("expected a response, got {other:?}"))),
            None => Err(Error::State("cloud closed the connection".into())),
        }
    }

    pub fn shutdown(mut self) -> Result<()> {
        write_frame(&mut self.writer, &WireMessage::Shutdown)?;
        Ok(())
    }
}

/// Per-sample result of an edge run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleOutcome {
    pub prediction: usize,
    pub offloaded: bool,
}

#[derive(Default)]
struct Tally {
    correct: usize,
    offloaded: usize,
    done: usize,
    sim_seconds: f64,
}

impl Tally {
    fn report(&self, strategy: Strategy, runtime_s: f64) -> BenchReport {
        let n = self.done.max(1) as f64;
        BenchReport {
            strategy,
            runtime_s,
            accuracy: self.correct as f64 / n,
            offload_fraction: self.offloaded as f64 / n,
            samples: self.done,
        }
    }
}

/// Run `strategy` over `data` in order. `cloud` is required for
/// `cloud_only` and `cooperation`; `gate` for `cooperation`.
///
/// Runtime is wall time of the inference loop in real mode (model loading
/// and connection setup excluded) or the accumulated link and edge
/// compute model in simulated mode.
pub fn edge_run(
    student: &Network,
    gate: Option<&EdgeGate>,
    data: &Dataset,
    cloud: Option<&str>,
    strategy: Strategy,
    profile: &NetProfile,
) -> Result<BenchReport> {
    edge_run_traced(student, gate, data, cloud, strategy, profile).map(|(r, _)| r)
}

pub fn edge_run_traced(
    student: &Network,
    gate: Option<&EdgeGate>,
    data: &Dataset,
    cloud: Option<&str>,
    strategy: Strategy,
    profile: &NetProfile,
) -> Result<(BenchReport, Vec<SampleOutcome>)> {
    profile.validate()?;
    if data.is_empty() {
        return Err(Error::input("empty dataset"));
    }
    if data.sample_dims() != student.input_dims() {
        return Err(Error::input(format!(
            "dataset samples {:?} do not match student input {:?}",
            data.sample_dims(),
            student.input_dims()
        )));
    }
    if strategy == Strategy::Cooperation && gate.is_none() {
        return Err(Error::input("cooperation needs a gate"));
    }
    let mut client = match (strategy.needs_cloud(), cloud) {
        (true, Some(addr)) => Some(CloudClient::connect(addr)?),
        (true, None) => return Err(Error::input(format!("{strategy} needs a cloud address"))),
        (false, _) => None,
    };

    let simulated = profile.mode == NetMode::Simulated;
    let student_seconds = student.flops_per_sample() as f64 / profile.edge_flops_per_s;
    let dims = data.sample_dims().to_vec();
    let mut tally = Tally::default();
    let mut outcomes = Vec::with_capacity(data.len());
    let start = Instant::now();

    for i in 0..data.len() {
        let x = data.samples().row(i);
        let label = data.labels()[i];
        let step = (|| -> Result<SampleOutcome> {
            let mut offload = strategy == Strategy::CloudOnly;
            let mut prediction = 0;
            if strategy != Strategy::CloudOnly {
                let mut batch = vec![1];
                batch.extend(&dims);
                let (logits, _) = student.forward(&Tensor::new(batch, x.to_vec())?)?;
                prediction = argmax(logits.row(0));
                if simulated {
                    tally.sim_seconds += student_seconds;
                }
                if strategy == Strategy::Cooperation {
                    offload = match gate.expect("checked above") {
                        EdgeGate::Oracle => prediction != label,
                        EdgeGate::Model(g) => {
                            let feats: Vec<f64> = logits.row(0).iter().map(|&v| v as f64).collect();
                            gate_decide(g, &feats)? == OffloadDecision::Offload
                        }
                    };
                }
            }
            if offload {
                let c = client.as_mut().expect("connected above");
                let (p, bytes) = c.infer(x, &dims)?;
                prediction = p;
                if simulated {
                    tally.sim_seconds += simulate_delay(profile, bytes)?;
                }
            }
            Ok(SampleOutcome {
                prediction,
                offloaded: offload,
            })
        })();
        match step {
            Ok(o) => {
                tally.done += 1;
                tally.correct += (o.prediction == label) as usize;
                tally.offloaded += o.offloaded as usize;
                outcomes.push(o);
            }
            Err(e) => {
                let runtime = if simulated { tally.sim_seconds } else { start.elapsed().as_secs_f64() };
                return Err(Error::Aborted {
                    completed: tally.done,
                    partial: Box::new(tally.report(strategy, runtime)),
                    source: Box::new(e),
                });
            }
        }
    }
    let runtime = if simulated { tally.sim_seconds } else { start.elapsed().as_secs_f64() };
    Ok((tally.report(strategy, runtime), outcomes))
}
