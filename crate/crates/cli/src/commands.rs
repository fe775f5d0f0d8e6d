//! The five subcommands: prepare, train, eval, predict, gradcheck.

use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};

use htrc_core::checkpoint;
use htrc_core::dataset::{self, LabeledDataset};
use htrc_core::metrics;
use htrc_core::model::Model;
use htrc_core::rng::{derive_seed, Rng};
use htrc_core::tensor::{Shape, Tensor};
use htrc_core::train as training;

use crate::config::RunConfig;
use crate::pgm;

const TARGET_SIDE: usize = 32;

fn resolve_label_map(labelmap: Option<&Path>, classes: usize) -> Result<Vec<char>> {
    match labelmap {
        Some(path) => Ok(dataset::read_label_map(path, classes)?),
        None => {
            let full = dataset::label_map_balanced47();
            if classes <= full.len() {
                Ok(full[..classes].to_vec())
            } else {
                bail!("no built-in label map covers {classes} classes; pass --labelmap FILE")
            }
        }
    }
}

fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    Ok(RunConfig::parse(&text)?)
}

fn check_paths_exist(paths: &[(&str, Option<&Path>)]) -> Result<()> {
    let missing: Vec<String> = paths
        .iter()
        .filter_map(|(key, p)| match p {
            Some(p) if !p.exists() => Some(format!("{key} = {}", p.display())),
            _ => None,
        })
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        bail!("referenced paths do not exist: {}", missing.join(", "))
    }
}

/// Rescale a raw IDX pair to 32x32, write the prepared pair plus the
/// 70:30 split-index file, and print the counts.
pub fn prepare(images: &Path, labels: &Path, out: &Path, invert: bool, seed: u64) -> Result<()> {
    let raw = dataset::read_idx_images(images)?;
    let label_vec = dataset::read_idx_labels(labels)?;
    if raw.count != label_vec.len() {
        bail!(
            "{} images but {} labels ({} vs {})",
            raw.count,
            label_vec.len(),
            images.display(),
            labels.display()
        );
    }
    let prepared = dataset::preprocess_to_bytes(&raw, TARGET_SIDE, invert)?;
    let split = dataset::split(raw.count, 0.7, seed)?;

    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    dataset::write_idx_images(&out.join("images.idx"), &prepared)?;
    dataset::write_idx_labels(&out.join("labels.idx"), &label_vec)?;
    dataset::write_split_csv(&out.join("split.csv"), &split)?;
    println!(
        "images={} train={} test={}",
        raw.count,
        split.train.len(),
        split.test.len()
    );
    Ok(())
}

/// Train per the config file; writes `checkpoint.htrc` and `curves.csv`
/// into the output directory.
pub fn train(config_path: &Path, out: &Path, _deterministic: bool) -> Result<()> {
    let config = load_config(config_path)?;
    let images_path = config
        .images
        .clone()
        .ok_or_else(|| anyhow!("config is missing required key `images`"))?;
    let labels_path = config
        .labels
        .clone()
        .ok_or_else(|| anyhow!("config is missing required key `labels`"))?;
    check_paths_exist(&[
        ("images", Some(&images_path)),
        ("labels", Some(&labels_path)),
        ("split", config.split.as_deref()),
        ("labelmap", config.labelmap.as_deref()),
    ])?;

    let raw = dataset::read_idx_images(&images_path)?;
    let label_vec = dataset::read_idx_labels(&labels_path)?;
    let label_map = resolve_label_map(config.labelmap.as_deref(), config.classes)?;
    let data = LabeledDataset::from_bytes(&raw, label_vec, label_map)?;

    let (train_set, val_set) = match &config.split {
        Some(path) => {
            let split = dataset::read_split_csv(path)?;
            (data.subset(&split.train)?, data.subset(&split.test)?)
        }
        None => {
            let all: Vec<usize> = (0..data.len()).collect();
            (data.subset(&all)?, data.subset(&[])?)
        }
    };

    let model_config = config.model_config(train_set.image_dims());
    let mut model = Model::<f32>::build(&model_config, config.init_seed)?;
    println!(
        "train={} val={} params={} steps_per_epoch={}",
        train_set.len(),
        val_set.len(),
        model.param_count(),
        training::steps_per_epoch(train_set.len(), config.batch_size)
    );

    let curve = training::train(
        &mut model,
        &train_set,
        &val_set,
        &config.schedule(),
        config.hyper(),
    )?;

    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let curves_path = out.join("curves.csv");
    fs::write(&curves_path, training::encode_curves_csv(&curve))
        .with_context(|| format!("cannot write {}", curves_path.display()))?;
    let ckpt_path = out.join("checkpoint.htrc");
    checkpoint::save(&ckpt_path, &model)?;

    if let Some(last) = curve.last() {
        match (last.val_loss, last.val_accuracy) {
            (Some(vl), Some(va)) => println!(
                "final train_loss={} train_acc={} val_loss={vl} val_acc={va}",
                last.train_loss, last.train_accuracy
            ),
            _ => println!(
                "final train_loss={} train_acc={}",
                last.train_loss, last.train_accuracy
            ),
        }
    }
    println!(
        "wrote {} and {}",
        ckpt_path.display(),
        curves_path.display()
    );
    Ok(())
}

/// Evaluate a checkpoint on an IDX pair; writes the predictions dump,
/// confusion matrix, per-class ROC curves, and AUC summary as CSV.
pub fn eval(
    checkpoint_path: &Path,
    images: &Path,
    labels: &Path,
    out: &Path,
    labelmap: Option<&Path>,
) -> Result<()> {
    let records = checkpoint::load(checkpoint_path)?;
    let raw = dataset::read_idx_images(images)?;
    let label_vec = dataset::read_idx_labels(labels)?;
    let model = Model::assemble(records, (1, raw.height, raw.width), 0.0)
        .context("checkpoint is incompatible with the given images")?;
    let label_map = resolve_label_map(labelmap, model.classes())?;
    let data = LabeledDataset::from_bytes(&raw, label_vec, label_map)
        .context("dataset is incompatible with the checkpoint class count")?;

    let probs = training::predict_probs(&model, &data)?;
    let report = metrics::evaluate_scores(&probs, data.labels())?;

    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    fs::write(
        out.join("predictions.csv"),
        metrics::encode_predictions_csv(&probs, data.labels())?,
    )?;
    fs::write(
        out.join("confusion.csv"),
        metrics::encode_confusion_csv(&report.confusion),
    )?;
    fs::write(out.join("roc.csv"), metrics::encode_roc_csv(&report.roc))?;
    fs::write(
        out.join("auc.csv"),
        metrics::encode_auc_csv(&report.per_class, data.label_map()),
    )?;
    println!("accuracy={}", report.accuracy);
    Ok(())
}

/// Classify one PGM image: prints the predicted character, then the top-k
/// `char:prob` lines.
pub fn predict(
    checkpoint_path: &Path,
    image: &Path,
    topk: usize,
    invert: bool,
    labelmap: Option<&Path>,
) -> Result<()> {
    let records = checkpoint::load(checkpoint_path)?;
    let model = Model::assemble(records, (1, TARGET_SIDE, TARGET_SIDE), 0.0)?;
    let label_map = resolve_label_map(labelmap, model.classes())?;

    let raw = pgm::read_pgm(image)?;
    let tensor = dataset::preprocess(&raw, TARGET_SIDE, invert)?;
    let batch = tensor.reshape(Shape::new([1, 1, TARGET_SIDE, TARGET_SIDE])?)?;
    let probs = model.forward(&batch, false, 0)?;
    let row = probs.data();

    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| {
        row[b]
            .partial_cmp(&row[a])
            .expect("softmax outputs are finite")
            .then(a.cmp(&b))
    });
    println!("predicted: {}", label_map[order[0]]);
    for &c in order.iter().take(topk.min(row.len())) {
        println!("{}:{:.6}", label_map[c], row[c]);
    }
    Ok(())
}

/// Finite-difference check of every parameter gradient for the configured
/// model, printing the worst relative error per block.
pub fn gradcheck(config_path: &Path) -> Result<()> {
    const TOLERANCE: f64 = 1e-4;
    let config = load_config(config_path)?;
    let model_config = config.model_config((1, TARGET_SIDE, TARGET_SIDE));
    let mut model = Model::<f64>::build(&model_config, config.init_seed)?;
    if model.param_count() > 50_000 {
        eprintln!(
            "warning: {} parameters; central differences need 2 forward passes per parameter",
            model.param_count()
        );
    }

    let mut rng = Rng::new(derive_seed(config.init_seed, 0x6f));
    let sample_len = TARGET_SIDE * TARGET_SIDE;
    let data: Vec<f64> = (0..2 * sample_len).map(|_| rng.next_f64()).collect();
    let batch = Tensor::from_vec(Shape::new([2, 1, TARGET_SIDE, TARGET_SIDE])?, data)?;
    let labels = [
        rng.next_below(config.classes) as u8,
        rng.next_below(config.classes) as u8,
    ];
    let targets = training::one_hot::<f64>(&labels, config.classes)?;

    let report = training::gradient_check(&mut model, &batch, &targets, 1e-5)?;
    for block in &report.blocks {
        println!("{} max_rel_err={:.3e}", block.name, block.max_rel_err);
    }
    let worst = report.max_rel_err();
    if report.passes(TOLERANCE) {
        println!("gradcheck PASS (max_rel_err={worst:.3e} <= {TOLERANCE:.1e})");
        Ok(())
    } else {
        bail!("gradcheck FAIL: max_rel_err={worst:.3e} > {TOLERANCE:.1e}")
    }
}
