//! `replift train`: adversarial training with checkpoints and a metrics log.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use replift_core::datagen::load_dataset;
use replift_core::skeleton::SkeletonSpec;
use replift_core::train::{
    load_state, run as train_run, save_state, MetricsRow, TrainConfig, TrainSink, TrainState,
    METRICS_CSV_HEADER,
};
use replift_core::Error as CoreError;

use crate::config::load_train_config;
use crate::manifest::{digest_dir_into, RunManifest};
use crate::{commands::resolve, CliError, CliResult};

pub struct Args {
    pub config: Option<PathBuf>,
    pub data: PathBuf,
    pub out: PathBuf,
    pub eval_data: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub lr: Option<f64>,
    pub decay: Option<f64>,
    pub critic_iters: Option<usize>,
    pub gp_weight: Option<f64>,
    pub epochs: Option<usize>,
    pub batch: Option<usize>,
    pub seed: Option<u64>,
    pub no_kcs: bool,
}

struct FileSink {
    out: PathBuf,
    csv: fs::File,
}

impl FileSink {
    fn new(out: &Path, fresh: bool) -> CliResult<Self> {
        fs::create_dir_all(out)?;
        let csv_path = out.join("metrics.csv");
        let write_header = fresh || !csv_path.exists();
        let mut csv = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&csv_path)?;
        if write_header && csv.metadata()?.len() == 0 {
            writeln!(csv, "{METRICS_CSV_HEADER}")?;
        }
        Ok(FileSink {
            out: out.to_path_buf(),
            csv,
        })
    }
}

impl TrainSink for FileSink {
    fn on_epoch(&mut self, row: &MetricsRow) -> replift_core::Result<()> {
        writeln!(self.csv, "{}", row.to_csv_line())?;
        self.csv.flush()?;
        Ok(())
    }

    fn on_checkpoint(&mut self, state: &TrainState, is_final: bool) -> replift_core::Result<()> {
        let name = if is_final {
            "checkpoint_final.ckpt".to_string()
        } else {
            format!("checkpoint_epoch_{:04}.ckpt", state.epoch)
        };
        save_state(state, &self.out.join(name))
    }
}

pub fn run(workdir: &Path, args: Args) -> CliResult<()> {
    let data_dir = resolve(workdir, &args.data);
    let out = resolve(workdir, &args.out);
    fs::create_dir_all(&out)?;

    let dataset = load_dataset(&data_dir)?;
    let eval_dataset = match &args.eval_data {
        Some(p) => Some(load_dataset(&resolve(workdir, p))?),
        None => None,
    };

    let mut manifest = RunManifest::begin("train", args.seed);
    digest_dir_into(&mut manifest, "data", &data_dir, true)?;
    if let Some(p) = &args.eval_data {
        digest_dir_into(&mut manifest, "eval_data", &resolve(workdir, p), true)?;
    }

    let (mut state, fresh) = match &args.resume {
        Some(ckpt) => {
            let ckpt = resolve(workdir, ckpt);
            manifest.add_input("resume", &ckpt)?;
            let mut state = load_state(&ckpt)?;
            // only the target epoch count may change on resume; everything
            // else comes from the saved config so the run replays exactly
            if let Some(epochs) = args.epochs {
                state.cfg.epochs = epochs;
            }
            (state, false)
        }
        None => {
            let mut cfg = match &args.config {
                Some(p) => {
                    let p = resolve(workdir, p);
                    manifest.add_input("config", &p)?;
                    load_train_config(&p)?
                }
                None => TrainConfig::default(),
            };
            if let Some(v) = args.lr {
                cfg.learning_rate = v;
            }
            if let Some(v) = args.decay {
                cfg.decay = v;
            }
            if let Some(v) = args.critic_iters {
                cfg.critic_iters = v;
            }
            if let Some(v) = args.gp_weight {
                cfg.gp_weight = v;
            }
            if let Some(v) = args.epochs {
                cfg.epochs = v;
            }
            if let Some(v) = args.batch {
                cfg.batch_size = v;
            }
            if let Some(v) = args.seed {
                cfg.seed = v;
            }
            if args.no_kcs {
                cfg.kcs_enabled = false;
            }
            manifest.seed = Some(cfg.seed);
            (TrainState::init(cfg, SkeletonSpec::h36m17())?, true)
        }
    };

    let mut sink = FileSink::new(&out, fresh)?;
    let result = train_run(&mut state, &dataset, eval_dataset.as_ref(), &mut sink);

    if let Err(CoreError::NonFinite(what)) = &result {
        // diagnostic snapshot of the state that produced the non-finite loss
        let snapshot = out.join("diagnostic.ckpt");
        let _ = save_state(&state, &snapshot);
        return Err(CliError::numerical(format!(
            "non-finite loss ({what}); diagnostic snapshot at {}",
            snapshot.display()
        )));
    }
    result?;

    for entry in fs::read_dir(&out)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(".ckpt") || name == "metrics.csv" {
            manifest.add_output(&name, &entry.path())?;
        }
    }
    manifest.finish(&out)?;
    Ok(())
}
