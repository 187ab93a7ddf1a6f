use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use supportneeds::augment;
use supportneeds::checkpoint::{self, Expect};
use supportneeds::config::RunConfig;
use supportneeds::data::{fuse, parse_dataset, write_dataset, Dataset, DatasetKind};
use supportneeds::encoder::Encoder;
use supportneeds::eval::{evaluate, micro_roc, roc_curve, wilcoxon_signed_rank};
use supportneeds::pipeline::{self, Variant};
use supportneeds::q_model::{self, TokenSource};
use supportneeds::{synthetic, Error, Result};

#[derive(Parser)]
#[command(
    name = "supportneeds",
    version,
    about = "Semi-supervised support-need classification for health questions"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides every other source.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override a config key, e.g. `--set loss.tau=0.8`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
    /// Replace existing output files.
    #[arg(long, global = true)]
    overwrite: bool,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Supervised,
    SemiSupervised,
    Full,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Supervised => Variant::Supervised,
            VariantArg::SemiSupervised => Variant::SemiSupervised,
            VariantArg::Full => Variant::Full,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic labeled/unlabeled/test corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Warm up and self-train the answer-aware model.
    TrainQa {
        #[arg(long)]
        labeled: PathBuf,
        #[arg(long)]
        unlabeled: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pseudo-label an unlabeled set with a trained answer-aware model.
    PseudoLabel {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        unlabeled: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate extra labeled questions from few-shot prompts.
    Augment {
        #[arg(long)]
        labeled: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score generated questions and keep the reliable, diverse ones.
    Select {
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        labeled: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write kept-count as the threshold sweeps 0..1.
        #[arg(long)]
        sweep: bool,
    },
    /// Train the question-only model on the fused set.
    TrainQ {
        #[arg(long)]
        labeled: PathBuf,
        #[arg(long)]
        pseudo: Option<PathBuf>,
        #[arg(long)]
        selected: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a question model on a labeled test set.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Export ROC points (also enabled by eval.roc_export).
        #[arg(long)]
        roc: bool,
    },
    /// k-fold cross-validation of the whole pipeline on a labeled set.
    Cv {
        #[arg(long)]
        labeled: PathBuf,
        #[arg(long)]
        unlabeled: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "full")]
        variant: VariantArg,
        /// Second variant to compare against with a paired signed-rank test.
        #[arg(long, value_enum)]
        baseline: Option<VariantArg>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify questions read line by line from stdin; JSON lines on stdout.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// End-to-end run on a synthetic corpus with offline backends.
    Smoke {
        #[arg(long)]
        out: PathBuf,
    },
}

/// Output files of one command; existing files are kept unless
/// `--overwrite` is given.
struct Outputs {
    dir: PathBuf,
    overwrite: bool,
}

impl Outputs {
    fn new(dir: &Path, overwrite: bool) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            overwrite,
        })
    }

    fn path(&self, name: &str) -> Result<PathBuf> {
        let p = self.dir.join(name);
        if p.exists() && !self.overwrite {
            return Err(Error::config(
                "--overwrite",
                format!("{} already exists; pass --overwrite to replace it", p.display()),
            ));
        }
        Ok(p)
    }

    fn text(&self, name: &str, text: &str) -> Result<PathBuf> {
        let p = self.path(name)?;
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }

    fn json(&self, name: &str, value: &impl serde::Serialize) -> Result<PathBuf> {
        self.text(
            name,
            &(serde_json::to_string_pretty(value).expect("serializable") + "\n"),
        )
    }

    fn dataset(&self, name: &str, ds: &Dataset) -> Result<PathBuf> {
        let p = self.path(name)?;
        let f = File::create(&p).map_err(|e| Error::io(&p, e))?;
        write_dataset(ds, BufWriter::new(f), true).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }

    fn checkpoint_dir(&self, name: &str) -> Result<PathBuf> {
        self.path(name)
    }

    fn config(&self, cfg: &RunConfig) -> Result<()> {
        // always refreshed: it describes the latest command writing here
        cfg.write_effective(&self.dir).map(|_| ())
    }
}

fn read_dataset(path: &Path, kind: DatasetKind, cfg: &RunConfig) -> Result<Dataset> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let out = parse_dataset(BufReader::new(f), kind, &cfg.parse_options()?).map_err(|e| match e {
        Error::Record { line, message } => Error::Record {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })?;
    if out.dropped_no_best > 0 {
        log::warn!(
            "{}: dropped {} samples without a best answer",
            path.display(),
            out.dropped_no_best
        );
    }
    log::info!("{}: {} {kind} samples", path.display(), out.dataset.len());
    Ok(out.dataset)
}

fn q_expect<'a>(cfg: &RunConfig, classes: &'a supportneeds::data::ClassSet, encoder: &'a str) -> Expect<'a> {
    Expect {
        classes: Some(classes),
        encoder: (cfg.q_model.token_source == TokenSource::Encoder).then_some(encoder),
    }
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    let mut sets = g.sets.clone();
    if let Some(seed) = g.seed {
        sets.push(format!("seed={seed}"));
    }
    let cfg = RunConfig::load(g.config.as_deref(), std::env::vars(), &sets)?;
    let classes = cfg.classes()?;

    match cli.command {
        Command::Synth { out } => {
            let o = Outputs::new(&out, g.overwrite)?;
            let c = synthetic::generate(&cfg.synthetic, cfg.seed)?;
            o.dataset("labeled.jsonl", &c.labeled)?;
            o.dataset("unlabeled.jsonl", &c.unlabeled)?;
            o.dataset("test.jsonl", &c.test)?;
            o.config(&cfg)?;
            println!(
                "wrote {} labeled, {} unlabeled, {} test samples to {}",
                c.labeled.len(),
                c.unlabeled.len(),
                c.test.len(),
                out.display()
            );
        }

        Command::TrainQa {
            labeled,
            unlabeled,
            out,
        } => {
            let d_l = read_dataset(&labeled, DatasetKind::Labeled, &cfg)?;
            let d_u = read_dataset(&unlabeled, DatasetKind::Unlabeled, &cfg)?;
            let o = Outputs::new(&out, g.overwrite)?;
            let encoder = cfg.build_encoder()?;
            let qa = cfg.qa_config(classes.len());
            let (identity, hash) = (encoder.identity(), cfg.hash());
            let mut hook = |rec: &supportneeds::trainer::GenerationRecord,
                            params: &supportneeds::qa_model::QaParams| {
                let dir = o.checkpoint_dir(&format!("generation-{}", rec.generation))?;
                checkpoint::save_qa(
                    &dir,
                    params,
                    &qa,
                    &classes,
                    &identity,
                    &hash,
                    serde_json::to_value(rec).expect("serializable"),
                )
            };
            let (qa, outcome) = pipeline::train_qa(&cfg, encoder.as_ref(), &d_l, &d_u, &mut hook)?;
            let st = &outcome.state;
            let log = json!({
                "generations": st.history,
                "generation_count": st.history.len(),
                "best_generation": st.best_generation,
                "pseudo_admitted": st.admitted.len(),
            });
            let dir = o.checkpoint_dir("qa_model")?;
            checkpoint::save_qa(&dir, &outcome.params, &qa, &classes, &identity, &hash, log.clone())?;
            o.json("training_log.json", &log)?;
            o.config(&cfg)?;
            println!(
                "{} generations, best {} (validation micro-F1 {:.4}); checkpoint in {}",
                st.history.len(),
                st.best_generation,
                st.history[st.best_generation].validation_f1,
                dir.display()
            );
        }

        Command::PseudoLabel {
            checkpoint: ckpt,
            unlabeled,
            out,
        } => {
            let encoder = cfg.build_encoder()?;
            let identity = encoder.identity();
            let (params, qa, _) = checkpoint::load_qa(
                &ckpt,
                &Expect {
                    classes: Some(&classes),
                    encoder: Some(&identity),
                },
            )?;
            let d_u = read_dataset(&unlabeled, DatasetKind::Unlabeled, &cfg)?;
            let o = Outputs::new(&out, g.overwrite)?;
            let p = pipeline::pseudo_label(&cfg, encoder.as_ref(), &qa, &params, &d_u)?;
            o.dataset("pseudo.jsonl", &p.dataset)?;
            let all = p.all_confident.iter().filter(|&&b| b).count();
            o.json(
                "pseudo_summary.json",
                &json!({"input": d_u.len(), "admitted": p.dataset.len(), "all_confident": all, "tau": cfg.loss.tau}),
            )?;
            o.config(&cfg)?;
            println!(
                "admitted {} of {} ({} confident on every class)",
                p.dataset.len(),
                d_u.len(),
                all
            );
        }

        Command::Augment { labeled, out } => {
            let d_l = read_dataset(&labeled, DatasetKind::Labeled, &cfg)?;
            let o = Outputs::new(&out, g.overwrite)?;
            let audit = o.path("llm_audit.jsonl")?;
            let llm = cfg.build_llm(Some(&audit))?;
            let gen = pipeline::generate(&cfg, llm.as_ref(), &d_l)?;
            o.dataset("generated.jsonl", &gen.candidates)?;
            o.json(
                "generation_audit.json",
                &json!({"backend": llm.identity(), "batches": gen.audit}),
            )?;
            o.config(&cfg)?;
            println!(
                "generated {} candidates in {} batches",
                gen.candidates.len(),
                gen.audit.len()
            );
        }

        Command::Select {
            candidates,
            labeled,
            out,
            sweep,
        } => {
            let gen = read_dataset(&candidates, DatasetKind::Augmented, &cfg)?;
            let d_l = read_dataset(&labeled, DatasetKind::Labeled, &cfg)?;
            let o = Outputs::new(&out, g.overwrite)?;
            let encoder = cfg.build_encoder()?;
            let scored = pipeline::score(&cfg, encoder.as_ref(), &gen, &d_l)?;
            let selected = augment::select(&scored, &d_l)?;
            o.dataset("candidates.jsonl", &augment::archive(&scored, &d_l)?)?;
            o.dataset("selected.jsonl", &selected)?;
            if sweep {
                let etas: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
                let curve = augment::selection_curve(&scored, cfg.augment.delta, &etas)?;
                let points: Vec<_> = curve
                    .iter()
                    .map(|(eta, kept)| json!({"eta": eta, "kept": kept}))
                    .collect();
                o.json(
                    "selection_curve.json",
                    &json!({"delta": cfg.augment.delta, "points": points}),
                )?;
            }
            o.config(&cfg)?;
            println!("kept {} of {} candidates", selected.len(), scored.len());
        }

        Command::TrainQ {
            labeled,
            pseudo,
            selected,
            out,
        } => {
            let d_l = read_dataset(&labeled, DatasetKind::Labeled, &cfg)?;
            let d_u_star = match &pseudo {
                Some(p) => read_dataset(p, DatasetKind::Pseudo, &cfg)?,
                None => Dataset::empty(DatasetKind::Pseudo, classes.clone()),
            };
            let d_a_star = match &selected {
                Some(p) => read_dataset(p, DatasetKind::SelectedAugmented, &cfg)?,
                None => Dataset::empty(DatasetKind::SelectedAugmented, classes.clone()),
            };
            let o = Outputs::new(&out, g.overwrite)?;
            let fused = fuse(&d_l, &d_u_star, &d_a_star)?;
            let encoder = cfg.build_encoder()?;
            let (params, history) = pipeline::train_question_model(&cfg, encoder.as_ref(), &fused.dataset)?;
            let log = json!({
                "fused": fused.dataset.len(),
                "excluded_partial_pseudo": fused.excluded_partial,
                "epochs": history.iter().map(|e| json!({"epoch": e.epoch, "loss": e.loss})).collect::<Vec<_>>(),
            });
            o.dataset("fused.jsonl", &fused.dataset)?;
            let dir = o.checkpoint_dir("q_model")?;
            checkpoint::save_q(
                &dir,
                &params,
                &cfg.q_model,
                &classes,
                &encoder.identity(),
                &cfg.hash(),
                log.clone(),
            )?;
            o.json("training_log.json", &log)?;
            o.config(&cfg)?;
            println!(
                "trained on {} samples for {} epochs; checkpoint in {}",
                fused.dataset.len(),
                history.len(),
                dir.display()
            );
        }

        Command::Evaluate {
            checkpoint: ckpt,
            test,
            out,
            roc,
        } => {
            let encoder = cfg.build_encoder()?;
            let identity = encoder.identity();
            let (params, qcfg, _) = checkpoint::load_q(&ckpt, &q_expect(&cfg, &classes, &identity))?;
            let d = read_dataset(&test, DatasetKind::Labeled, &cfg)?;
            let o = Outputs::new(&out, g.overwrite)?;
            let tok = (qcfg.token_source == TokenSource::Encoder).then_some(encoder.as_ref() as &dyn Encoder);
            let probs = q_model::predict_dataset(&params, &qcfg, &d, tok)?;
            let y = d.labels();
            let report = evaluate(&classes, &y, &probs, cfg.eval.threshold)?;
            o.json("metrics.json", &report)?;
            let table = report.to_table();
            o.text("metrics.txt", &table)?;
            if roc || cfg.eval.roc_export {
                let mut per_class = serde_json::Map::new();
                for (c, name) in classes.names().iter().enumerate() {
                    let labels: Vec<bool> = y.iter().map(|l| l.get(c)).collect();
                    let scores: Vec<f64> = probs.iter().map(|p| p[c]).collect();
                    per_class.insert(name.clone(), json!(roc_curve(&labels, &scores)?));
                }
                o.json(
                    "roc.json",
                    &json!({"micro": micro_roc(&y, &probs)?, "per_class": per_class}),
                )?;
            }
            o.config(&cfg)?;
            print!("{table}");
        }

        Command::Cv {
            labeled,
            unlabeled,
            variant,
            baseline,
            out,
        } => {
            let d_l = read_dataset(&labeled, DatasetKind::Labeled, &cfg)?;
            let needs_pool = [Some(variant), baseline]
                .into_iter()
                .flatten()
                .any(|v| Variant::from(v) != Variant::Supervised);
            let d_u = match (&unlabeled, needs_pool) {
                (Some(p), _) => read_dataset(p, DatasetKind::Unlabeled, &cfg)?,
                (None, false) => Dataset::empty(DatasetKind::Unlabeled, classes.clone()),
                (None, true) => {
                    return Err(Error::config("--unlabeled", "this variant needs an unlabeled set"));
                }
            };
            let o = Outputs::new(&out, g.overwrite)?;
            let encoder = cfg.build_encoder()?;
            let audit = o.path("llm_audit.jsonl")?;
            let llm = cfg.build_llm(Some(&audit))?;
            let report =
                pipeline::cross_validate_pipeline(&cfg, encoder.as_ref(), llm.as_ref(), &d_l, &d_u, variant.into())?;
            o.json("cv_report.json", &report)?;
            o.text("cv_report.txt", &report.to_table())?;
            print!("{}", report.to_table());
            if let Some(b) = baseline {
                let base =
                    pipeline::cross_validate_pipeline(&cfg, encoder.as_ref(), llm.as_ref(), &d_l, &d_u, b.into())?;
                let f1 =
                    |r: &supportneeds::eval::CvReport| r.folds.iter().map(|f| f.metrics.micro.f1).collect::<Vec<_>>();
                let test = wilcoxon_signed_rank(&f1(&report), &f1(&base))?;
                o.json("cv_baseline.json", &base)?;
                o.json("comparison.json", &json!({"metric": "micro_f1", "wilcoxon": test}))?;
                println!(
                    "baseline mean micro-F1 {:.4}; signed-rank p = {:.4}",
                    base.f1.mean, test.p_value
                );
            }
            o.config(&cfg)?;
        }

        Command::Predict { checkpoint: ckpt } => {
            let encoder = cfg.build_encoder()?;
            let identity = encoder.identity();
            let (params, qcfg, m) = checkpoint::load_q(&ckpt, &q_expect(&cfg, &classes, &identity))?;
            let tok = (qcfg.token_source == TokenSource::Encoder).then_some(encoder.as_ref() as &dyn Encoder);
            let stdout = io::stdout();
            let mut w = BufWriter::new(stdout.lock());
            for (i, line) in io::stdin().lock().lines().enumerate() {
                let line = line.map_err(|e| Error::io("<stdin>", e))?;
                let value = match q_model::predict(&line, &params, &qcfg, tok) {
                    Ok((p, label)) => {
                        let probs: serde_json::Map<_, _> =
                            m.classes.iter().cloned().zip(p.iter().map(|&v| json!(v))).collect();
                        let names: Vec<&String> = m
                            .classes
                            .iter()
                            .enumerate()
                            .filter(|(c, _)| label.get(*c))
                            .map(|(_, n)| n)
                            .collect();
                        json!({"line": i + 1, "probabilities": probs, "labels": names})
                    }
                    Err(e) => json!({"line": i + 1, "error": e.to_string()}),
                };
                writeln!(w, "{value}").map_err(|e| Error::io("<stdout>", e))?;
            }
            w.flush().map_err(|e| Error::io("<stdout>", e))?;
        }

        Command::Smoke { out } => {
            let o = Outputs::new(&out, g.overwrite)?;
            let report = pipeline::smoke(&cfg)?;
            o.json("smoke_report.json", &report)?;
            o.config(&cfg)?;
            for (name, r) in [
                ("supervised", &report.supervised),
                ("semi-supervised", &report.semi_supervised),
                ("full", &report.full),
            ] {
                println!("{name}: micro-F1 {:.4}", r.micro.f1);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Generation { raw, .. } = &e {
                eprintln!("raw response:\n{raw}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
