//! Readers for the OTB, LaSOT and GOT-10k directory layouts, and a writer
//! for the GOT-10k style layout used by materialized synthetic suites.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{FrameSource, SequenceRecord};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// `<seq>/groundtruth_rect.txt` and `<seq>/img/`.
    Otb,
    /// `<class>/<seq>/groundtruth.txt`, `img/`, `full_occlusion.txt`, `out_of_view.txt`.
    Lasot,
    /// `<seq>/groundtruth.txt`, images in `<seq>/` or `<seq>/img/`, optional `absence.label`.
    Got10k,
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "otb" => Ok(Layout::Otb),
            "lasot" => Ok(Layout::Lasot),
            "got10k" | "got-10k" => Ok(Layout::Got10k),
            other => Err(Error::Config(format!("unknown dataset layout `{other}` (otb, lasot, got10k)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceError {
    pub name: String,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct DatasetLoad {
    pub sequences: Vec<SequenceRecord>,
    pub errors: Vec<SequenceError>,
}

/// Parses `x,y,w,h` separated by commas, tabs or whitespace. Zero sizes are
/// accepted (absent-target annotations); negative sizes are not.
pub fn parse_box_line(line: &str) -> std::result::Result<BoundingBox, String> {
    let parts: Vec<&str> = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
    if parts.len() != 4 {
        return Err(format!("expected 4 values, got {}: `{line}`", parts.len()));
    }
    let mut v = [0.0; 4];
    for (slot, p) in v.iter_mut().zip(&parts) {
        *slot = p.parse::<f64>().map_err(|_| format!("not a number: `{p}`"))?;
        if !slot.is_finite() {
            return Err(format!("non-finite value in `{line}`"));
        }
    }
    if v[2] < 0.0 || v[3] < 0.0 {
        return Err(format!("negative box size in `{line}`"));
    }
    Ok(BoundingBox { x: v[0], y: v[1], w: v[2], h: v[3] })
}

fn parse_boxes(path: &Path) -> std::result::Result<Vec<BoundingBox>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| parse_box_line(l).map_err(|e| format!("{} line {}: {e}", path.display(), i + 1)))
        .collect()
}

/// Leading digits of the file stem, for numeric ordering.
fn frame_number(p: &Path) -> Option<u64> {
    let stem = p.file_stem()?.to_str()?;
    let digits: String = stem.chars().filter(|c| c.is_ascii_digit()).collect();
    digits.parse().ok()
}

fn list_images(dir: &Path) -> std::result::Result<Vec<PathBuf>, String> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| format!("{}: {e}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "jpg" | "jpeg" | "png"))
        })
        .collect();
    files.sort_by(|a, b| frame_number(a).cmp(&frame_number(b)).then_with(|| a.cmp(b)));
    Ok(files)
}

/// 0/1 flags, one per line or comma-separated on one line.
fn parse_flags(path: &Path) -> std::result::Result<Vec<bool>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| match s {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(format!("{}: bad flag `{other}`", path.display())),
        })
        .collect()
}

fn subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
    out.sort();
    Ok(out)
}

/// `name<TAB or whitespace>tag1,tag2` per line.
fn read_attribute_file(path: &Path) -> BTreeMap<String, Vec<String>> {
    let mut map = BTreeMap::new();
    if let Ok(text) = fs::read_to_string(path) {
        for line in text.lines() {
            let mut it = line.split_whitespace();
            if let (Some(name), Some(tags)) = (it.next(), it.next()) {
                map.insert(name.to_string(), tags.split(',').filter(|t| !t.is_empty()).map(String::from).collect());
            }
        }
    }
    map
}

struct Raw {
    name: String,
    gt: PathBuf,
    image_dir: PathBuf,
    absent: Vec<PathBuf>,
    attributes: Vec<String>,
}

fn assemble(raw: Raw) -> std::result::Result<SequenceRecord, String> {
    let boxes = parse_boxes(&raw.gt)?;
    let frames = list_images(&raw.image_dir)?;
    if frames.len() != boxes.len() {
        return Err(format!("{} frames but {} ground-truth boxes", frames.len(), boxes.len()));
    }
    let mut visible: Vec<bool> = boxes.iter().map(|b| b.is_valid()).collect();
    for f in raw.absent.iter().filter(|p| p.exists()) {
        let flags = parse_flags(f)?;
        if flags.len() != boxes.len() {
            return Err(format!("{}: {} flags for {} frames", f.display(), flags.len(), boxes.len()));
        }
        for (v, a) in visible.iter_mut().zip(flags) {
            *v &= !a;
        }
    }
    let rec = SequenceRecord { name: raw.name, frames: FrameSource::Paths(frames), boxes, visible, attributes: raw.attributes };
    rec.validate().map_err(|e| e.to_string())?;
    Ok(rec)
}

/// Reads every sequence under `root`. Problems with a single sequence are
/// collected as error records and loading continues.
pub fn load_dataset(root: &Path, layout: Layout) -> Result<DatasetLoad> {
    if !root.is_dir() {
        return Err(Error::Precondition(format!("dataset root {} is not a directory", root.display())));
    }
    let attrs = read_attribute_file(&root.join("attributes.txt"));
    let tags = |name: &str| attrs.get(name).cloned().unwrap_or_default();
    let mut raws = Vec::new();
    match layout {
        Layout::Otb => {
            for dir in subdirs(root)? {
                let name = dir.file_name().unwrap().to_string_lossy().to_string();
                let gt = dir.join("groundtruth_rect.txt");
                if gt.exists() {
                    raws.push(Raw { attributes: tags(&name), name, gt, image_dir: dir.join("img"), absent: vec![] });
                }
            }
        }
        Layout::Lasot => {
            for class_dir in subdirs(root)? {
                let class = class_dir.file_name().unwrap().to_string_lossy().to_string();
                for dir in subdirs(&class_dir)? {
                    let name = dir.file_name().unwrap().to_string_lossy().to_string();
                    let gt = dir.join("groundtruth.txt");
                    if gt.exists() {
                        let mut attributes = tags(&name);
                        attributes.insert(0, class.clone());
                        raws.push(Raw {
                            name,
                            image_dir: dir.join("img"),
                            absent: vec![dir.join("full_occlusion.txt"), dir.join("out_of_view.txt")],
                            gt,
                            attributes,
                        });
                    }
                }
            }
        }
        Layout::Got10k => {
            let listed: Option<Vec<String>> = fs::read_to_string(root.join("list.txt"))
                .ok()
                .map(|t| t.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect());
            let dirs = match listed {
                Some(names) => names.into_iter().map(|n| root.join(n)).collect(),
                None => subdirs(root)?,
            };
            for dir in dirs {
                let name = dir.file_name().unwrap().to_string_lossy().to_string();
                let gt = dir.join("groundtruth.txt");
                let image_dir = if dir.join("img").is_dir() { dir.join("img") } else { dir.clone() };
                raws.push(Raw { attributes: tags(&name), name, gt, image_dir, absent: vec![dir.join("absence.label")] });
            }
        }
    }
    let mut out = DatasetLoad::default();
    for raw in raws {
        let name = raw.name.clone();
        match assemble(raw) {
            Ok(rec) => out.sequences.push(rec),
            Err(message) => {
                log::warn!("skipping sequence {name}: {message}");
                out.errors.push(SequenceError { name, message });
            }
        }
    }
    Ok(out)
}

/// Writes `record` as `<dir>/img/00000001.png ...`, `groundtruth.txt` and
/// `absence.label`.
pub fn write_sequence(record: &SequenceRecord, dir: &Path) -> Result<()> {
    let img = dir.join("img");
    fs::create_dir_all(&img)?;
    let mut gt = String::new();
    let mut absence = String::new();
    for i in 0..record.len() {
        record.frame(i)?.save_png(&img.join(format!("{:08}.png", i + 1)))?;
        let b = record.boxes[i];
        gt.push_str(&format!("{},{},{},{}\n", b.x, b.y, b.w, b.h));
        absence.push_str(if record.visible[i] { "0\n" } else { "1\n" });
    }
    fs::write(dir.join("groundtruth.txt"), gt)?;
    fs::write(dir.join("absence.label"), absence)?;
    Ok(())
}
