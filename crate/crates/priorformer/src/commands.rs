//! The subcommands, independent of argument parsing. Each writes its report
//! to `out`.

use std::io::Write;
use std::path::Path;

use priorformer_core::dataio::{FeatureSequence, Frame};
use priorformer_core::encoder::EncoderConfig;
use priorformer_core::gradcheck::{check_model_gradient, DEFAULT_STEP};
use priorformer_core::model::{init_model, predict_video, Ablation, ModelConfig, ModelParams};
use priorformer_core::rng::SeededRng;
use priorformer_core::synth::synth_dataset;
use priorformer_core::train::{self, predict_labeled, split_dataset, EvalReport, TrainConfig, TrainError};

use crate::config::{read_run_config, read_synth_spec, KeyValues};
use crate::parallel::map_ordered;
use crate::report::{format_epoch, format_report, format_trace};
use crate::{io, Failure};

/// Relative-error bound the `gradcheck` command enforces.
pub const GRADIENT_TOLERANCE: f64 = 1e-4;

fn emit(out: &mut dyn Write, text: &str) -> Result<(), Failure> {
    out.write_all(text.as_bytes()).map_err(|source| Failure::Io {
        path: "<stdout>".into(),
        source,
    })
}

pub fn synth(spec_path: &Path, out_dir: &Path, out: &mut dyn Write) -> Result<(), Failure> {
    let spec = read_synth_spec(spec_path)?;
    let videos = synth_dataset(&spec)?;
    let files = io::write_dataset(&videos, out_dir)?;
    emit(out, &format!("wrote {} files to {}\n", files.len(), out_dir.display()))
}

/// Evaluation with predictions spread over `threads` workers.
pub fn evaluate(
    params: &ModelParams,
    videos: &[FeatureSequence],
    ablation: Ablation,
    threads: usize,
) -> Result<EvalReport, Failure> {
    let params = params.with_ablation(ablation)?;
    let predictions = map_ordered(videos, threads, |v| predict_labeled(v, &params))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EvalReport::from_predictions(ablation.tag(), predictions)?)
}

pub fn train(
    data_dir: &Path,
    config_path: Option<&Path>,
    out_path: &Path,
    threads: usize,
    out: &mut dyn Write,
) -> Result<(), Failure> {
    let videos = io::load_dataset(data_dir)?;
    // input widths default to those of the data
    let dims = videos[0].dims()?;
    let mut base = ModelConfig::default();
    base.encoder.tokens = dims.tokens;
    base.encoder.feature_width = dims.feature_width;
    base.encoder.content_width = dims.content_width;
    base.encoder.distortion_width = dims.distortion_width;
    let (model, config) = match config_path {
        Some(p) => read_run_config(p, base, TrainConfig::default())?,
        None => (base, TrainConfig::default()),
    };
    let (train_set, test_set) = split_dataset(&videos, config.split_ratio, config.seed)?;
    emit(
        out,
        &format!("split\ttrain\t{}\ttest\t{}\n", train_set.len(), test_set.len()),
    )?;
    match train::train(&train_set, &test_set, &model, &config) {
        Ok(trained) => {
            for record in &trained.history {
                emit(out, &(format_epoch(record) + "\n"))?;
            }
            io::save_params(&trained.params, out_path)?;
            let report = evaluate(&trained.params, &test_set, model.ablation, threads)?;
            emit(out, &format_report(&report))
        }
        Err(TrainError::Model(e)) => Err(e.into()),
        Err(TrainError::Diverged(d)) => {
            for record in &d.history {
                emit(out, &(format_epoch(record) + "\n"))?;
            }
            io::save_params(&d.params, out_path)?;
            Err(Failure::Diverged {
                epoch: d.epoch + 1,
                path: out_path.to_path_buf(),
            })
        }
    }
}

pub fn predict(params_path: &Path, video_path: &Path, out: &mut dyn Write) -> Result<(), Failure> {
    let params = io::load_params(params_path)?;
    let video = io::read_feature_file(video_path)?;
    let trace = predict_video(&video, &params).map_err(|e| Failure::at(video_path, e))?;
    emit(out, &format_trace(&trace))
}

pub fn eval(
    params_path: &Path,
    data_dir: &Path,
    ablation: Ablation,
    threads: usize,
    out: &mut dyn Write,
) -> Result<(), Failure> {
    let params = io::load_params(params_path)?;
    let videos = io::load_dataset(data_dir)?;
    let report = evaluate(&params, &videos, ablation, threads)?;
    emit(out, &format_report(&report))
}

/// The small configuration `gradcheck` uses when no file is given.
pub fn gradcheck_config() -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            layers: 2,
            heads: 2,
            width: 8,
            ff_width: 16,
            tokens: 4,
            feature_width: 6,
            content_width: 5,
            distortion_width: 4,
        },
        gru_hidden: 4,
        ..ModelConfig::default()
    }
}

/// A random model and video for one check. The label sits one unit above
/// the prediction so the L1 loss is differentiable at the probe point.
pub fn gradcheck_case(
    config: &ModelConfig,
    frames: usize,
    seed: u64,
) -> Result<(ModelParams, FeatureSequence), Failure> {
    let params = init_model(config, seed)?;
    let e = &config.encoder;
    let mut rng = SeededRng::new(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut video = FeatureSequence {
        id: format!("gradcheck_{seed}"),
        frames: (0..frames)
            .map(|_| Frame {
                features: rng.normal_tensor(&[e.tokens, e.feature_width], 1.0),
                content: rng.normal_tensor(&[e.content_width], 1.0),
                distortion: rng.normal_tensor(&[e.distortion_width], 1.0),
            })
            .collect(),
        mos: None,
    };
    video.mos = Some(predict_video(&video, &params)?.score + 1.0);
    Ok((params, video))
}

pub fn gradcheck(
    config_path: Option<&Path>,
    seed: u64,
    cases: usize,
    frames: usize,
    threads: usize,
    out: &mut dyn Write,
) -> Result<(), Failure> {
    let config = match config_path {
        Some(p) => {
            let mut kv = KeyValues::read(p)?;
            let c = kv.model_config(gradcheck_config())?;
            kv.train_config(TrainConfig::default())?;
            kv.finish()?;
            c
        }
        None => gradcheck_config(),
    };
    let seeds: Vec<u64> = (0..cases as u64).map(|i| seed.wrapping_add(i)).collect();
    let results = map_ordered(&seeds, threads, |&s| -> Result<_, Failure> {
        let (params, video) = gradcheck_case(&config, frames.max(1), s)?;
        Ok((s, check_model_gradient(&video, &params, DEFAULT_STEP)?))
    });
    let mut worst = (0.0f64, String::new());
    for r in results {
        let (s, check) = r?;
        emit(
            out,
            &format!(
                "case\tseed\t{s}\tparameters\t{}\tmax_rel_err\t{:e}\tat\t{}\n",
                check.checked, check.max_relative_error, check.worst
            ),
        )?;
        if check.max_relative_error >= worst.0 {
            worst = (check.max_relative_error, check.worst);
        }
    }
    emit(out, &format!("max rel err {:e}\n", worst.0))?;
    if worst.0 < GRADIENT_TOLERANCE {
        Ok(())
    } else {
        Err(Failure::Gradient {
            error: worst.0,
            parameter: worst.1,
            tolerance: GRADIENT_TOLERANCE,
        })
    }
}
