use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use featsearch_core::metrics::{
    class_diversity, face_iou_report, paired_overlap, read_jsonl, IouMode, ResultSet,
};
use serde::de::DeserializeOwned;

use crate::exit::user;

#[derive(Debug, clap::Subcommand)]
pub enum Command {
    /// Mean number of distinct classes per result set.
    Diversity {
        /// Result sets, one JSON object per line.
        #[arg(long)]
        results: PathBuf,
        /// JSON object mapping image id to class label.
        #[arg(long)]
        labels: PathBuf,
    },
    /// Mean number of shared images between two models' result sets.
    Overlap {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// IoU of neighbour regions against ground-truth boxes, binned by area.
    Iou {
        #[arg(long)]
        results: PathBuf,
        /// Ground-truth boxes, one JSON object per line.
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Top1)]
        mode: Mode,
        /// Image size ROWSxCOLS for boxes that do not carry one.
        #[arg(long, default_value = "224x224", value_parser = parse_size)]
        image_size: (usize, usize),
        /// Per-bin CSV instead of JSON.
        #[arg(long)]
        csv: bool,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum Mode {
    Top1,
    MeanTopK,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (r, c) = s.split_once('x').ok_or("expected ROWSxCOLS")?;
    let r = r.parse::<usize>().map_err(|e| e.to_string())?;
    let c = c.parse::<usize>().map_err(|e| e.to_string())?;
    if r == 0 || c == 0 {
        return Err("image size must be positive".into());
    }
    Ok((r, c))
}

fn jsonl<T: DeserializeOwned>(path: &Path) -> anyhow::Result<Vec<T>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_jsonl(BufReader::new(f)).map_err(|e| user(format!("{}: {e}", path.display())))
}

pub fn run(cmd: Command) -> anyhow::Result<ExitCode> {
    match cmd {
        Command::Diversity { results, labels } => {
            let sets: Vec<ResultSet> = jsonl(&results)?;
            let labels: BTreeMap<String, String> = crate::read_json(&labels)?;
            crate::print_json(&class_diversity(&sets, &labels)?)?;
        }
        Command::Overlap { a, b } => {
            let a: Vec<ResultSet> = jsonl(&a)?;
            let b: Vec<ResultSet> = jsonl(&b)?;
            crate::print_json(&paired_overlap(&a, &b)?)?;
        }
        Command::Iou {
            results,
            truth,
            mode,
            image_size,
            csv,
        } => {
            let sets: Vec<ResultSet> = jsonl(&results)?;
            let truth = jsonl(&truth)?;
            let mode = match mode {
                Mode::Top1 => IouMode::Top1,
                Mode::MeanTopK => IouMode::MeanTopK,
            };
            let report = face_iou_report(&sets, &truth, image_size, mode)?;
            if csv {
                print!("{}", report.to_csv());
            } else {
                crate::print_json(&report)?;
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
