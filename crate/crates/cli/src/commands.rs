use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use ictasnet::analysis::{deviation_percent, format_millions, summarize_config, ModelSummary};
use ictasnet::checks::{self, CheckOutcome};
use ictasnet::model::{checkpoint, presets};
use ictasnet::train::{sdr, train_with, Example, StepRecord, SynthSpec};
use ictasnet::{AudioBuffer, Model};
use serde::Serialize;

use crate::config::ConfigFile;
use crate::fsutil::write_atomic;
use crate::wav::{read_wav, write_wav, Encoding};
use crate::{EnhanceArgs, GradcheckArgs, SummaryArgs, SummaryFormat, SynthArgs, TrainArgs};

/// One row of the published-size comparison.
#[derive(Debug, Clone, Serialize)]
pub struct PublishedDiff {
    pub preset: String,
    pub parameters: usize,
    pub published_millions: f64,
    pub deviation_percent: f64,
}

#[derive(Debug, Clone)]
pub enum SummaryReport {
    Model(Box<ModelSummary>),
    PublishedDiff(Vec<PublishedDiff>),
}

pub fn published_diff(sample_rate: u32) -> Result<Vec<PublishedDiff>> {
    presets()
        .into_iter()
        .filter_map(|p| p.reference_millions.map(|r| (p, r)))
        .map(|(p, published)| {
            let s = summarize_config(&p.config, sample_rate)?;
            Ok(PublishedDiff {
                preset: p.name.to_string(),
                parameters: s.total_parameters,
                published_millions: published,
                deviation_percent: deviation_percent(s.total_parameters, published),
            })
        })
        .collect()
}

pub fn summary(args: &SummaryArgs, out: &mut dyn Write) -> Result<SummaryReport> {
    if args.diff_paper {
        let rows = published_diff(args.sample_rate)?;
        match args.format {
            SummaryFormat::Text => {
                writeln!(out, "{:<10} {:>12} {:>9} {:>10} {:>9}", "preset", "params", "ours", "published", "dev %")?;
                for r in &rows {
                    writeln!(
                        out,
                        "{:<10} {:>12} {:>9} {:>8} M {:>+9.2}",
                        r.preset,
                        r.parameters,
                        format_millions(r.parameters),
                        r.published_millions,
                        r.deviation_percent
                    )?;
                }
            }
            SummaryFormat::Toml => {
                #[derive(Serialize)]
                struct Doc<'a> {
                    preset: &'a [PublishedDiff],
                }
                write!(out, "{}", toml::to_string(&Doc { preset: &rows })?)?;
            }
        }
        return Ok(SummaryReport::PublishedDiff(rows));
    }
    let cfg = ConfigFile::resolve(args.model.config.as_deref(), args.model.preset.as_deref())?;
    let s = summarize_config(&cfg.model, args.sample_rate)?;
    match args.format {
        SummaryFormat::Text => writeln!(out, "{s}")?,
        SummaryFormat::Toml => write!(out, "{}", toml::to_string(&s)?)?,
    }
    Ok(SummaryReport::Model(Box::new(s)))
}

pub fn enhance(args: &EnhanceArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = ConfigFile::resolve(args.model.config.as_deref(), args.model.preset.as_deref())?;
    let model = Model::new(cfg.model)?;
    match &args.checkpoint {
        Some(path) => {
            let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            checkpoint::load_into(BufReader::new(file), &model)
                .with_context(|| format!("loading {}", path.display()))?;
        }
        None => log::warn!("no checkpoint given; enhancing with randomly initialized weights"),
    }
    let (audio, encoding) = read_wav(&args.input)?;
    let enhanced = model
        .enhance(&audio)
        .with_context(|| format!("enhancing {}", args.input.display()))?;
    let mono = AudioBuffer::mono(enhanced, audio.sample_rate())?;
    write_wav(&args.out, &mono, encoding)?;
    writeln!(out, "wrote {} ({} samples)", args.out.display(), mono.frames())?;
    Ok(())
}

/// Pairs `<stem>_noisy.wav` / `<stem>_clean.wav` in `dir`, sorted by stem.
pub fn load_pairs(dir: &Path) -> Result<Vec<Example>> {
    let mut stems: Vec<String> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            e.file_name()
                .to_str()
                .and_then(|n| n.strip_suffix("_noisy.wav"))
                .map(str::to_owned)
        })
        .collect();
    stems.sort();
    ensure!(!stems.is_empty(), "no *_noisy.wav files in {}", dir.display());
    stems
        .iter()
        .map(|stem| {
            let (noisy, _) = read_wav(&dir.join(format!("{stem}_noisy.wav")))?;
            let clean_path = dir.join(format!("{stem}_clean.wav"));
            let (clean, _) = read_wav(&clean_path)?;
            ensure!(clean.channels() == 1, "{} must be mono", clean_path.display());
            ensure!(
                clean.frames() == noisy.frames(),
                "{stem}: clean and noisy lengths differ ({} vs {})",
                clean.frames(),
                noisy.frames()
            );
            let clean = clean.channel(0);
            Ok(Example {
                snr_db: f64::NAN,
                noisy,
                clean,
            })
        })
        .collect()
}

/// Writes the loss history as `step,loss,sdr_db` rows.
pub fn write_loss_csv(path: &Path, history: &[StepRecord]) -> Result<()> {
    write_atomic(path, |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["step", "loss", "sdr_db"])?;
        for r in history {
            csv.write_record([r.step.to_string(), r.loss.to_string(), r.sdr_db.to_string()])?;
        }
        csv.flush()?;
        Ok(())
    })
}

/// Paths written by [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub checkpoint: PathBuf,
    pub loss_csv: PathBuf,
    pub history: Vec<StepRecord>,
}

pub fn train(args: &TrainArgs, out: &mut dyn Write) -> Result<TrainOutput> {
    let mut cfg = ConfigFile::resolve(args.model.config.as_deref(), args.model.preset.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.model.seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(steps) = args.steps {
        cfg.train.steps = steps;
    }
    let data = match (&args.input, args.synth) {
        (Some(dir), false) => load_pairs(dir)?,
        (None, true) => SynthSpec {
            seed: cfg.train.seed,
            count: args.count,
            duration_s: args.duration,
            mics: cfg.model.mics,
            sample_rate: 16000,
            reference_channel: cfg.model.reference_channel,
        }
        .generate()?,
        _ => bail!("give exactly one of --synth and --in"),
    };
    let model = Model::new(cfg.model.clone())?;
    let history = train_with(&model, &data, &cfg.train, |r| {
        log::info!("step {} loss {:.4} sdr {:.3} dB", r.step, r.loss, r.sdr_db);
    })?;

    write_atomic(&args.out, |w| Ok(checkpoint::save(w, &model)?))?;
    let loss_csv = args.loss.clone().unwrap_or_else(|| args.out.with_extension("csv"));
    write_loss_csv(&loss_csv, &history)?;
    if let Some(last) = history.last() {
        writeln!(out, "step {}: loss {:.4}, sdr {:.3} dB", last.step, last.loss, last.sdr_db)?;
    }
    writeln!(out, "wrote {} and {}", args.out.display(), loss_csv.display())?;
    Ok(TrainOutput {
        checkpoint: args.out.clone(),
        loss_csv,
        history,
    })
}

pub fn gradcheck(args: &GradcheckArgs, out: &mut dyn Write) -> Result<()> {
    let cases = match &args.op {
        Some(name) => vec![checks::find(name).with_context(|| {
            let names: Vec<&str> = checks::registry().iter().map(|c| c.name).collect();
            format!("unknown check {name:?}; available: {}", names.join(", "))
        })?],
        None => checks::registry(),
    };
    let mut failed: Vec<CheckOutcome> = Vec::new();
    for case in cases {
        let r = case.run()?;
        writeln!(
            out,
            "{:<20} {:<9} max rel err {:.3e} (< {:.0e})  {}",
            r.name,
            r.kind,
            r.max_error,
            r.tolerance,
            if r.passed() { "PASS" } else { "FAIL" }
        )?;
        if !r.passed() {
            failed.push(r);
        }
    }
    ensure!(failed.is_empty(), "{} gradient check(s) failed", failed.len());
    Ok(())
}

pub fn synth(args: &SynthArgs, out: &mut dyn Write) -> Result<Vec<Example>> {
    let cfg = ConfigFile::resolve(args.model.config.as_deref(), args.model.preset.as_deref())?;
    let data = SynthSpec {
        seed: args.seed,
        count: args.count,
        duration_s: args.duration,
        mics: cfg.model.mics,
        sample_rate: args.sample_rate,
        reference_channel: cfg.model.reference_channel,
    }
    .generate()?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    for (i, ex) in data.iter().enumerate() {
        write_wav(&args.out.join(format!("pair{i:04}_noisy.wav")), &ex.noisy, Encoding::Float32)?;
        let clean = AudioBuffer::mono(ex.clean.clone(), args.sample_rate)?;
        write_wav(&args.out.join(format!("pair{i:04}_clean.wav")), &clean, Encoding::Float32)?;
        let reference = ex.noisy.channel(cfg.model.reference_index());
        writeln!(
            out,
            "pair{i:04}: snr {:.2} dB, input sdr {:.2} dB",
            ex.snr_db,
            sdr(&ex.clean, &reference)?
        )?;
    }
    writeln!(out, "wrote {} pairs to {}", data.len(), args.out.display())?;
    Ok(data)
}
