use crate::config::RunConfig;
use crate::viz;
use grunet_core::backbone::GruNet;
use grunet_core::checkpoint;
use grunet_core::data::{make_synthetic, save_dataset, Sample, SplitManifest};
use grunet_core::gdam::Mode;
use grunet_core::metrics::MetricsReport;
use grunet_core::train::{ablate, evaluate, predict, train, write_ablation_csv};
use grunet_core::{Error, Result};
use ndarray::{Array2, Array3, ArrayD, IxDyn};
use std::path::Path;

fn load_image(path: &Path) -> Result<Array3<f64>> {
    if !path.is_file() {
        return Err(Error::Config(format!(
            "image {} does not exist",
            path.display()
        )));
    }
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    let mut out = Array3::zeros((h as usize, w as usize, 3));
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            out[(y as usize, x as usize, c)] = px.0[c] as f64 / 255.0;
        }
    }
    Ok(out)
}

fn sample_from_image(path: &Path) -> Result<Sample> {
    let image = load_image(path)?;
    let (h, w, _) = image.dim();
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image")
        .to_string();
    Ok(Sample {
        id,
        image,
        mask: Array2::zeros((h, w)),
    })
}

fn manifest(train: &[Sample], val: &[Sample], test: &[Sample]) -> SplitManifest {
    let ids = |s: &[Sample]| s.iter().map(|x| x.id.clone()).collect();
    SplitManifest {
        train: ids(train),
        val: ids(val),
        test: ids(test),
    }
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let mcfg = cfg.model_config()?;
    let tcfg = cfg.train_config()?;
    let text = cfg.text_matrix()?;
    let (tr, va, te) = cfg.load_splits()?;
    cfg.echo()?;
    manifest(&tr, &va, &te).save(&cfg.out_dir.join("split.json"))?;

    let mut model = GruNet::<f64>::new(mcfg)?;
    let record = train(&mut model, &tcfg, &tr, &va, text.as_ref())?;
    std::fs::write(cfg.out_dir.join("train.jsonl"), record.to_jsonl())?;

    let last = record.epochs.last().map(|e| e.train_loss);
    println!(
        "trained {} for {} steps; final train loss {}; best val dice {}",
        cfg.model.variant,
        record.steps,
        last.map_or("n/a".into(), |v| format!("{v:.6}")),
        record
            .best_val_dice
            .map_or("n/a".into(), |v| format!("{v:.4}")),
    );
    Ok(())
}

pub fn cmd_eval(cfg: &RunConfig, ckpt: &Path, split_name: &str) -> Result<()> {
    let (mut model, text) = checkpoint::load::<f64>(ckpt)?;
    let (tr, va, te) = cfg.load_splits()?;
    let samples = match split_name {
        "train" => tr,
        "val" => va,
        "test" => te,
        other => {
            return Err(Error::Config(format!(
                "unknown split {other:?} (expected train, val or test)"
            )))
        }
    };
    if samples.is_empty() {
        return Err(Error::Config(format!("split {split_name:?} is empty")));
    }
    let report = evaluate(&mut model, &samples, text.as_ref())?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Data(format!("cannot serialize report: {e}")))?;
    std::fs::write(cfg.out_dir.join(format!("eval_{split_name}.json")), json)?;
    println!("{}", MetricsReport::CSV_HEADER);
    println!("{}", report.per_sample_mean.csv_row(split_name));
    println!("{}", report.pooled.csv_row(&format!("{split_name}_pooled")));
    Ok(())
}

pub fn cmd_predict(ckpt: &Path, image_path: &Path, out_dir: &Path) -> Result<()> {
    let (mut model, text) = checkpoint::load::<f64>(ckpt)?;
    let sample = sample_from_image(image_path)?;
    let prob = predict(&mut model, &sample, text.as_ref())?;
    std::fs::create_dir_all(out_dir)?;
    let prob_path = out_dir.join(format!("{}_prob.png", sample.id));
    let mask_path = out_dir.join(format!("{}_mask.png", sample.id));
    viz::save_prob_png(&prob, &prob_path)?;
    viz::save_mask_png(&prob, 0.5, &mask_path)?;
    println!(
        "wrote {} and {}",
        prob_path.display(),
        mask_path.display()
    );
    Ok(())
}

pub fn cmd_ablate(cfg: &RunConfig) -> Result<()> {
    let mcfg = cfg.model_config()?;
    let tcfg = cfg.train_config()?;
    let text = cfg.text_matrix_for_full()?;
    let (tr, va, te) = cfg.load_splits()?;
    cfg.echo()?;
    manifest(&tr, &va, &te).save(&cfg.out_dir.join("split.json"))?;

    let result = ablate::<f64>(&mcfg, &tcfg, &tr, &va, &te, text.as_ref())?;
    let csv_path = cfg.out_dir.join("ablation.csv");
    write_ablation_csv(&result.rows, &csv_path)?;
    print!("{}", grunet_core::train::ablation_csv(&result.rows));
    println!("wrote {}", csv_path.display());
    Ok(())
}

pub fn cmd_heatmaps(ckpt: &Path, image_path: &Path, out_dir: &Path) -> Result<()> {
    let (mut model, text) = checkpoint::load::<f64>(ckpt)?;
    let image = load_image(image_path)?;
    let (h, w, c) = image.dim();
    let batch = image
        .into_shape(IxDyn(&[1, h, w, c]))
        .map_err(|e| Error::Data(e.to_string()))?
        .to_owned();
    let pass = model.forward(&batch, text.as_ref(), Mode::Infer, 0, false, true)?;
    let trace = pass
        .trace
        .ok_or_else(|| Error::Data("forward pass produced no trace".into()))?;

    std::fs::create_dir_all(out_dir)?;
    for (stage, act) in &trace {
        let panel = channel_mean(act);
        let raw = serde_json::json!({
            "stage": stage,
            "shape": panel.dim(),
            "data": panel.iter().copied().collect::<Vec<f64>>(),
        });
        std::fs::write(
            out_dir.join(format!("{stage}.json")),
            serde_json::to_string(&raw).map_err(|e| Error::Data(e.to_string()))?,
        )?;
        let img = viz::resize_nearest(&viz::normalize(&panel), h, w);
        viz::save_colormapped(&img, &out_dir.join(format!("{stage}.png")))?;
    }
    println!("wrote {} heatmaps to {}", trace.len(), out_dir.display());
    if !trace.contains_key("gdam_attention") {
        return Err(Error::Config(format!(
            "checkpoint variant {:?} has no attention module; the gdam panel was skipped \
             (encoder and decoder panels were written)",
            model.cfg.variant.as_str()
        )));
    }
    Ok(())
}

fn channel_mean(act: &ArrayD<f64>) -> Array2<f64> {
    let s = act.shape();
    let (h, w, c) = (s[1], s[2], s[3]);
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut sum = 0.0;
            for ch in 0..c {
                sum += act[[0, y, x, ch]];
            }
            out[(y, x)] = sum / c as f64;
        }
    }
    out
}

pub fn cmd_gen_synthetic(n: usize, size: usize, seed: u64, out: &Path) -> Result<()> {
    let samples = make_synthetic(n, size, seed);
    save_dataset(&samples, out)?;
    println!(
        "wrote {} samples ({size}x{size}, seed {seed}) to {}",
        samples.len(),
        out.display()
    );
    Ok(())
}
