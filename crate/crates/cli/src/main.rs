use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use edgecoop::config::Config;
use edgecoop::data::{load_cache, save_cache, Dataset, Split};
use edgecoop::gate::{
    balanced_training_set, evaluate_gate, gate_report_row, label_samples, load_gate, save_gate, train_gate, GateKind,
    GATE_REPORT_HEADER,
};
use edgecoop::model_spec::{compression_ratio, realize};
use edgecoop::nn::{evaluate, serialize, train, Network};
use edgecoop::rl::{compress_with_policy, history_csv, Policy};
use edgecoop::runtime::{bench_compare, bench_csv, edge_run, CloudServer, EdgeGate, NetMode, NetProfile, Strategy};
use edgecoop::Error;

#[derive(Parser)]
#[command(name = "edgecoop", version, about = "Edge-cloud cooperative inference pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the dataset described by the config and write it as a cache file.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the teacher network on the training split.
    TrainTeacher {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset cache; defaults to the config's `[data]` section.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Search for a compressed student with the RL policy.
    Compress {
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Label data with the student, select normal samples by QBC and train a gate.
    TrainGate {
        #[arg(long)]
        student: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Overrides `gate.kind` from the config.
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Serve teacher predictions until a shutdown message arrives.
    ServeCloud {
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long, default_value = "127.0.0.1:7878")]
        bind: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        profile: Option<Profile>,
    },
    /// Run one inference strategy at the edge.
    RunEdge {
        #[arg(long)]
        student: PathBuf,
        #[arg(long)]
        gate: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        cloud: Option<String>,
        #[arg(long, value_enum)]
        strategy: StrategyArg,
        #[arg(long, value_enum)]
        profile: Option<Profile>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Ask the cloud server to stop after the run.
        #[arg(long)]
        stop_cloud: bool,
    },
    /// Run all three strategies against a local cloud and print the comparison.
    Bench {
        #[arg(long)]
        student: PathBuf,
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        gate: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum)]
        profile: Option<Profile>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    Real,
    Simulated,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Edge,
    Cloud,
    Coop,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

fn load_config(path: Option<&Path>) -> Result<Config, Error> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn load_data(cfg: &Config, path: Option<&Path>) -> Result<Dataset, Error> {
    match path {
        Some(p) => load_cache(p),
        None => cfg.load_data(),
    }
}

fn select(data: &Dataset, split: SplitArg) -> Dataset {
    match split {
        SplitArg::Train => data.split(Split::Train),
        SplitArg::Val => data.split(Split::Val),
        SplitArg::Test => data.split(Split::Test),
        SplitArg::All => data.clone(),
    }
}

fn profile(cfg: &Config, over: Option<Profile>) -> Result<NetProfile, Error> {
    let mut p = cfg.net_profile()?;
    match over {
        Some(Profile::Real) => p.mode = NetMode::Real,
        Some(Profile::Simulated) => p.mode = NetMode::Simulated,
        None => {}
    }
    Ok(p)
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    fs::write(path, text)?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::GenData { config, out } => {
            let cfg = load_config(config.as_deref())?;
            let data = cfg.load_data()?;
            save_cache(&data, &out)?;
            println!(
                "wrote {} samples ({} train, {} val, {} test) to {}",
                data.len(),
                data.count(Split::Train),
                data.count(Split::Val),
                data.count(Split::Test),
                out.display()
            );
        }
        Command::TrainTeacher { config, data, out } => {
            let cfg = load_config(config.as_deref())?;
            let data = load_data(&cfg, data.as_deref())?;
            let spec = cfg.teacher_spec(data.sample_dims(), data.class_count())?;
            let real = realize(&spec, cfg.teacher.seed)?;
            if !real.skipped.is_empty() {
                eprintln!("teacher: skipped spec layers {:?} (shape collapse)", real.skipped);
            }
            let tcfg = cfg.train_config()?;
            let (net, stats) = train(real.network, &data.split(Split::Train), &tcfg)?;
            for s in &stats {
                eprintln!("epoch {:>3}  loss {:.4}  train acc {:.4}", s.epoch, s.loss, s.accuracy);
            }
            let test = data.split(Split::Test);
            let acc = if test.is_empty() { evaluate(&net, &data)? } else { evaluate(&net, &test)? };
            serialize::save(&net, &out)?;
            println!("teacher: {} params, test accuracy {acc:.4}", net.param_count());
        }
        Command::Compress {
            teacher,
            config,
            data,
            out,
            history,
        } => {
            let cfg = load_config(config.as_deref())?;
            let data = load_data(&cfg, data.as_deref())?;
            let teacher = serialize::load(&teacher)?;
            let ccfg = cfg.compress_config()?;
            let policy = Policy::new(ccfg.hidden_width, ccfg.gru_layers, ccfg.seed);
            let result = compress_with_policy(&teacher, &ccfg, &data, policy, |e| {
                eprintln!(
                    "episode {:>3}  C {:.4}  A {:.4}  R {:.4}  actions {:?}",
                    e.index, e.compression, e.accuracy, e.reward, e.actions
                );
            })?;
            serialize::save(&result.best_student, &out)?;
            if let Some(path) = history {
                write_text(&path, &history_csv(&result.history))?;
            }
            let best = &result.history[result.best_episode];
            let c = compression_ratio(&teacher, &result.best_student)?;
            let test = data.split(Split::Test);
            let acc = if test.is_empty() { best.accuracy } else { evaluate(&result.best_student, &test)? };
            println!(
                "best episode {}: C {c:.4}, validation A {:.4}, test A {acc:.4}, {} params",
                best.index,
                best.accuracy,
                result.best_student.param_count()
            );
        }
        Command::TrainGate {
            student,
            config,
            data,
            kind,
            out,
            report,
        } => {
            let cfg = load_config(config.as_deref())?;
            let data = load_data(&cfg, data.as_deref())?;
            let student = serialize::load(&student)?;
            let kind: GateKind = match kind {
                Some(k) => k.parse().map_err(|_| Error::Config(format!("unknown gate kind {k:?}")))?,
                None => cfg.gate_kind()?,
            };
            let hyper = cfg.gate_hyper()?;
            let labeling = label_samples(&student, &data.split(Split::Train))?;
            eprintln!(
                "labelled training split: {} complex, {} normal",
                labeling.complex.len(),
                labeling.normal.len()
            );
            if labeling.complex.is_empty() {
                return Err(Error::State("the student makes no mistakes on the training split; nothing to offload".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.gate.seed);
            let samples = balanced_training_set(&labeling, &cfg.committee(), cfg.gate.qbc_r, &mut rng)?;
            let gate = train_gate(&samples, kind, &hyper, cfg.gate.seed)?;
            let test = data.split(Split::Test);
            let eval_set = if test.is_empty() { data.clone() } else { test };
            let eval = evaluate_gate(&gate, &label_samples(&student, &eval_set)?.samples());
            save_gate(&gate, &out)?;
            let row = gate_report_row(&gate, labeling.complex.len(), &eval);
            if let Some(path) = report {
                write_text(&path, &format!("{GATE_REPORT_HEADER}\n{row}\n"))?;
            }
            println!("{GATE_REPORT_HEADER}\n{row}");
        }
        Command::ServeCloud {
            teacher,
            bind,
            config,
            profile: over,
        } => {
            let cfg = load_config(config.as_deref())?;
            let teacher = serialize::load(&teacher)?;
            let server = CloudServer::bind(teacher, bind.as_str(), profile(&cfg, over)?)?;
            eprintln!("cloud: listening on {}", server.local_addr()?);
            server.serve()?;
            eprintln!("cloud: shut down");
        }
        Command::RunEdge {
            student,
            gate,
            config,
            data,
            cloud,
            strategy,
            profile: over,
            split,
            report,
            stop_cloud,
        } => {
            let cfg = load_config(config.as_deref())?;
            let data = select(&load_data(&cfg, data.as_deref())?, split);
            let student = serialize::load(&student)?;
            let gate = gate.map(|p| load_gate(&p)).transpose()?.map(EdgeGate::Model);
            let strategy = match strategy {
                StrategyArg::Edge => Strategy::EdgeOnly,
                StrategyArg::Cloud => Strategy::CloudOnly,
                StrategyArg::Coop => Strategy::Cooperation,
            };
            let profile = profile(&cfg, over)?;
            let result = edge_run(&student, gate.as_ref(), &data, cloud.as_deref(), strategy, &profile);
            if stop_cloud {
                if let Some(addr) = &cloud {
                    if let Ok(c) = edgecoop::runtime::CloudClient::connect(addr.as_str()) {
                        c.shutdown()?;
                    }
                }
            }
            let r = result?;
            let csv = bench_csv(std::slice::from_ref(&r));
            if let Some(path) = report {
                write_text(&path, &csv)?;
            }
            print!("{csv}");
        }
        Command::Bench {
            student,
            teacher,
            gate,
            config,
            data,
            profile: over,
            split,
            report,
        } => {
            let cfg = load_config(config.as_deref())?;
            let data = select(&load_data(&cfg, data.as_deref())?, split);
            let student: Network = serialize::load(&student)?;
            let teacher: Network = serialize::load(&teacher)?;
            let gate = EdgeGate::Model(load_gate(&gate)?);
            let cmp = bench_compare(&data, &student, &teacher, &gate, &profile(&cfg, over)?)?;
            if let Some(path) = report {
                write_text(&path, &cmp.csv)?;
            }
            print!("{}", cmp.table);
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Protocol { .. } => 3,
        Error::Numeric { .. } => 4,
        Error::Aborted { source, .. } => exit_code(source),
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Aborted { partial, .. } = &e {
                eprint!("partial report:\n{}", bench_csv(std::slice::from_ref(partial)));
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
