//! `pfpn` command-line interface.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::ablation::run_ablation;
use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::{
    generate_synthetic, list_images, load_dataset, load_mask, load_prediction, load_rgb,
    save_prediction, write_dataset,
};
use crate::error::{PfpnError, Result};
use crate::metrics::{evaluate, MetricsReport};
use crate::plot::pr_plot_svg;
use crate::train::{predict_images, train, FINAL_CHECKPOINT};

/// Exit status for success.
pub const EXIT_OK: i32 = 0;
/// Exit status for usage and configuration errors.
pub const EXIT_USAGE: i32 = 1;
/// Exit status for failures while running.
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "pfpn",
    version,
    about = "Progressive feature polishing network for salient object detection",
    after_help = "Exit status: 0 on success, 1 on usage or configuration errors, 2 on runtime failures.\n\
                  Set PFPN_OUTPUT_DIR to override the configured output directory."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model; writes model.ckpt, train_log.jsonl and config.toml to the output directory.
    Train(TrainArgs),
    /// Train one model per T / weight-sharing setting and compare them on a held-out split.
    Ablate(TrainArgs),
    /// Write 8-bit saliency maps for an image or a directory of images.
    Predict(PredictArgs),
    /// Score a directory of predictions against a directory of masks.
    Eval(EvalArgs),
    /// Draw the PR curves of one or more metric reports into an SVG file.
    Plot(PlotArgs),
    /// Write a synthetic dataset (images/ and masks/) to disk.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML run configuration [default: built-in defaults]
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Output directory [default: `output_dir` from the config, or $PFPN_OUTPUT_DIR]
    #[arg(short, long)]
    pub output_dir: Option<PathBuf>,
    /// Config overrides such as `--model.num_fpms=2` or `--train.max_iterations=10`
    #[arg(
        value_name = "--SECTION.KEY=VALUE",
        trailing_var_arg = true,
        allow_hyphen_values = true
    )]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Checkpoint written by `pfpn train`
    #[arg(short = 'k', long)]
    pub checkpoint: PathBuf,
    /// Image file or directory of .png/.jpg images
    #[arg(short, long)]
    pub input: PathBuf,
    /// Directory for the predicted maps (`<basename>.png`)
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of 8-bit predictions
    #[arg(short, long)]
    pub pred_dir: PathBuf,
    /// Directory of ground-truth masks with matching basenames
    #[arg(short, long)]
    pub mask_dir: PathBuf,
    /// Where to write the JSON metrics report
    #[arg(short, long)]
    pub report: PathBuf,
    /// Label stored in the report and used as the plot legend [default: prediction directory name]
    #[arg(short, long)]
    pub label: Option<String>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Metric reports written by `pfpn eval` (one curve each)
    #[arg(required = true, num_args = 1..)]
    pub reports: Vec<PathBuf>,
    /// Output SVG file
    #[arg(short, long)]
    pub output: PathBuf,
    /// Plot title
    #[arg(short, long, default_value = "Precision-recall")]
    pub title: String,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// TOML run configuration; its [data.synthetic] section is used [default: built-in defaults]
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Destination directory
    #[arg(short, long)]
    pub output: PathBuf,
    /// Use the held-out [ablation.test] spec instead of [data.synthetic]
    #[arg(long)]
    pub test_split: bool,
    /// Config overrides such as `--data.synthetic.num_samples=20`
    #[arg(
        value_name = "--SECTION.KEY=VALUE",
        trailing_var_arg = true,
        allow_hyphen_values = true
    )]
    pub overrides: Vec<String>,
}

/// Maps an error to its exit status.
pub fn exit_code(err: &PfpnError) -> i32 {
    if err.is_config() {
        EXIT_USAGE
    } else {
        EXIT_RUNTIME
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Ablate(a) => cmd_ablate(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Plot(a) => cmd_plot(&a),
        Command::Synth(a) => cmd_synth(&a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| PfpnError::io(dir, e))
}

fn load_run_config(
    config: Option<&Path>,
    output_dir: Option<&Path>,
    overrides: &[String],
) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(config, overrides)?;
    cfg.resolve_output_dir(output_dir);
    Ok(cfg)
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = load_run_config(a.config.as_deref(), a.output_dir.as_deref(), &a.overrides)?;
    let dir = &cfg.output_dir;
    create_dir(dir)?;
    let resolved = dir.join("config.toml");
    std::fs::write(&resolved, cfg.to_toml()).map_err(|e| PfpnError::io(&resolved, e))?;
    let tc = cfg.train_config();
    let samples = tc.data.load()?;
    log::info!(
        "training on {} samples for {} steps",
        samples.len(),
        tc.max_iterations
    );
    let outcome = train(&tc, &samples, Some(dir))?;
    let last = outcome.log.last().expect("at least one step");
    println!(
        "trained {} steps, final loss {:.4}; checkpoint {}",
        last.step,
        last.total,
        dir.join(FINAL_CHECKPOINT).display()
    );
    Ok(())
}

pub fn cmd_ablate(a: &TrainArgs) -> Result<()> {
    let cfg = load_run_config(a.config.as_deref(), a.output_dir.as_deref(), &a.overrides)?;
    let tc = cfg.train_config();
    let train_set = tc.data.load()?;
    let test_set = match &cfg.ablation.test_dataset {
        Some(dir) => load_dataset(dir)?,
        None => generate_synthetic(&cfg.ablation.test)?,
    };
    let report = run_ablation(
        &tc,
        &cfg.ablation.t_values,
        &cfg.ablation.shared,
        &train_set,
        &test_set,
        |row, _| {
            println!(
                "{}: MAE {:.4}  maxF {:.4}  meanF {:.4}  S {:.4}",
                row.label, row.mae, row.max_f, row.mean_f, row.s_measure
            )
        },
    )?;
    report.save(&cfg.output_dir)?;
    print!("{}", report.to_table());
    Ok(())
}

fn input_images(input: &Path) -> Result<Vec<(String, PathBuf)>> {
    if input.is_dir() {
        let images: Vec<_> = list_images(input)?.into_iter().collect();
        if images.is_empty() {
            return Err(PfpnError::Input(format!(
                "no images in {}",
                input.display()
            )));
        }
        Ok(images)
    } else {
        let id = input.file_stem().and_then(|s| s.to_str()).ok_or_else(|| {
            PfpnError::Input(format!("cannot name output for {}", input.display()))
        })?;
        Ok(vec![(id.to_string(), input.to_path_buf())])
    }
}

pub fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let (model, store) = Checkpoint::load(&a.checkpoint)?.into_model()?;
    let inputs = input_images(&a.input)?;
    create_dir(&a.output)?;
    for (id, path) in &inputs {
        let image = load_rgb(path)?;
        let map = predict_images(&model, &store, std::slice::from_ref(&image))?.remove(0);
        save_prediction(&a.output.join(format!("{id}.png")), &map)?;
    }
    println!(
        "wrote {} prediction(s) to {}",
        inputs.len(),
        a.output.display()
    );
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let preds = list_images(&a.pred_dir)?;
    let masks = list_images(&a.mask_dir)?;
    if preds.is_empty() {
        return Err(PfpnError::Input(format!(
            "no predictions in {}",
            a.pred_dir.display()
        )));
    }
    let unmatched_preds: Vec<&str> = preds
        .keys()
        .filter(|k| !masks.contains_key(*k))
        .map(String::as_str)
        .collect();
    let unmatched_masks: Vec<&str> = masks
        .keys()
        .filter(|k| !preds.contains_key(*k))
        .map(String::as_str)
        .collect();
    if !unmatched_preds.is_empty() || !unmatched_masks.is_empty() {
        let mut parts = Vec::new();
        if !unmatched_preds.is_empty() {
            parts.push(format!(
                "predictions without a mask: {}",
                unmatched_preds.join(", ")
            ));
        }
        if !unmatched_masks.is_empty() {
            parts.push(format!(
                "masks without a prediction: {}",
                unmatched_masks.join(", ")
            ));
        }
        return Err(PfpnError::Input(format!(
            "basename mismatch; {}",
            parts.join("; ")
        )));
    }
    let mut pred_maps = Vec::with_capacity(preds.len());
    let mut gt = Vec::with_capacity(preds.len());
    for (id, path) in &preds {
        let p = load_prediction(path)?;
        let m = load_mask(&masks[id])?;
        if p.resolution() != m.resolution() {
            return Err(PfpnError::Input(format!(
                "{id}: prediction is {}x{} but mask is {}x{}",
                p.height(),
                p.width(),
                m.height(),
                m.width()
            )));
        }
        pred_maps.push(p);
        gt.push(m);
    }
    let mut report = evaluate(&pred_maps, &gt)?;
    report.label = Some(a.label.clone().unwrap_or_else(|| {
        a.pred_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "predictions".into())
    }));
    if let Some(parent) = a.report.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    report.save(&a.report)?;
    println!("{}", report.headline());
    Ok(())
}

pub fn cmd_plot(a: &PlotArgs) -> Result<()> {
    let curves = a
        .reports
        .iter()
        .map(|path| {
            let report = MetricsReport::load(path)?;
            let label = report
                .label
                .clone()
                .unwrap_or_else(|| path.display().to_string());
            Ok((label, report.curve()?))
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(parent) = a.output.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    std::fs::write(&a.output, pr_plot_svg(&curves, &a.title))
        .map_err(|e| PfpnError::io(&a.output, e))?;
    println!("wrote {} curve(s) to {}", curves.len(), a.output.display());
    Ok(())
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let cfg = RunConfig::load(a.config.as_deref(), &a.overrides)?;
    let spec = if a.test_split {
        &cfg.ablation.test
    } else {
        &cfg.data.synthetic
    };
    let samples = generate_synthetic(spec)?;
    write_dataset(&a.output, &samples)?;
    println!("wrote {} samples to {}", samples.len(), a.output.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn trailing_overrides_are_collected() {
        let cli = Cli::try_parse_from([
            "pfpn",
            "train",
            "-c",
            "x.toml",
            "--model.num_fpms=2",
            "--train.seed=3",
        ])
        .unwrap();
        let Command::Train(a) = cli.command else {
            panic!()
        };
        assert_eq!(a.config, Some(PathBuf::from("x.toml")));
        assert_eq!(a.overrides, ["--model.num_fpms=2", "--train.seed=3"]);
    }
}
