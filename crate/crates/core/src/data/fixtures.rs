//! Synthetic colored-shape proxies for every task, separable by
//! construction, for desk-scale runs.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::manifest::{manifest_line, Split};
use crate::error::{Error, Result};
use crate::model::bbox::{BBox, BBoxSet};
use crate::tasks::{SocialTask, Target, TaskId, TaskRegistry};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixtureConfig {
    pub image_size: u32,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// Number of gesture classes drawn (the label list stays complete).
    pub hagrid_classes: usize,
    pub seed: u64,
    pub tasks: Vec<SocialTask>,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        Self {
            image_size: 48,
            train: 200,
            val: 50,
            test: 50,
            hagrid_classes: 4,
            seed: 0,
            tasks: SocialTask::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FixtureSummary {
    /// Manifest paths relative to the output directory.
    pub manifests: Vec<PathBuf>,
    pub records: usize,
}

impl FixtureSummary {
    /// Manifest paths keyed by task name, as a config's `data.manifests`
    /// expects them.
    pub fn manifest_map(&self, config: &FixtureConfig) -> BTreeMap<String, PathBuf> {
        config
            .tasks
            .iter()
            .zip(&self.manifests)
            .map(|(t, p)| (t.as_str().to_string(), p.clone()))
            .collect()
    }
}

const SKIN: [u8; 3] = [222, 184, 140];
const EYE: [u8; 3] = [255, 255, 255];
const PUPIL: [u8; 3] = [20, 20, 60];

const PALETTE: [[u8; 3]; 8] = [
    [230, 25, 25],
    [25, 200, 40],
    [30, 60, 230],
    [240, 220, 20],
    [200, 30, 220],
    [20, 210, 220],
    [0, 0, 0],
    [250, 140, 10],
];

/// Relation class to domain label: friends, family and couple are
/// intimate; professional and commercial are not; no relation maps to no
/// relation.
pub fn pisc_domain_of(relation: usize) -> usize {
    match relation {
        0..=2 => 0,
        3 | 4 => 1,
        _ => 2,
    }
}

struct Canvas {
    img: RgbImage,
    size: i32,
}

impl Canvas {
    fn new(size: u32, rng: &mut ChaCha8Rng) -> Self {
        let mut img = RgbImage::new(size, size);
        for p in img.pixels_mut() {
            let base = 110 + rng.random_range(0..30u8);
            *p = Rgb([base, base, base]);
        }
        Self { img, size: size as i32 }
    }

    fn put(&mut self, x: i32, y: i32, c: [u8; 3]) {
        if (0..self.size).contains(&x) && (0..self.size).contains(&y) {
            self.img.put_pixel(x as u32, y as u32, Rgb(c));
        }
    }

    fn rect(&mut self, x0: i32, y0: i32, w: i32, h: i32, c: [u8; 3]) {
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                self.put(x, y, c);
            }
        }
    }

    fn disc(&mut self, cx: f64, cy: f64, r: f64, c: [u8; 3]) {
        let (x0, x1) = ((cx - r).floor() as i32, (cx + r).ceil() as i32);
        let (y0, y1) = ((cy - r).floor() as i32, (cy + r).ceil() as i32);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                if dx * dx + dy * dy <= r * r {
                    self.put(x, y, c);
                }
            }
        }
    }
}

fn hue(h: f64) -> [u8; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let x = 1.0 - (h6 % 2.0 - 1.0).abs();
    let (r, g, b) = match h6 as usize {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [(r * 255.0) as u8, (g * 255.0) as u8, (b * 255.0) as u8]
}

fn face(c: &mut Canvas, cx: f64, cy: f64, r: f64, gaze_dx: f64) {
    c.disc(cx, cy, r, SKIN);
    for side in [-1.0, 1.0] {
        let ex = cx + side * r * 0.42;
        let ey = cy - r * 0.2;
        c.disc(ex, ey, r * 0.24, EYE);
        c.disc(ex + gaze_dx * r * 0.16, ey, r * 0.13, PUPIL);
    }
}

struct Sample {
    img: RgbImage,
    boxes: BBoxSet,
    targets: Vec<(TaskId, Target)>,
}

fn norm_box(s: f64, x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
    let f = |v: f64| (v / s).clamp(0.0, 1.0);
    BBox::new(f(x0), f(y0), f(x1), f(y1)).expect("fixture boxes are valid")
}

fn draw_lam(size: u32, i: usize, rng: &mut ChaCha8Rng) -> Sample {
    let s = size as f64;
    let mut c = Canvas::new(size, rng);
    let yes = i.is_multiple_of(2);
    let r = s * 0.27;
    let (cx, gaze) = if yes {
        (s / 2.0 + rng.random_range(-1.5..1.5), 0.0)
    } else {
        let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        (s / 2.0 + side * s * 0.17 + rng.random_range(-1.5..1.5), side)
    };
    let cy = s / 2.0 + rng.random_range(-1.5..1.5);
    face(&mut c, cx, cy, r, gaze);
    Sample {
        img: c.img,
        boxes: BBoxSet::empty(),
        targets: vec![(TaskId::Lam, Target::Label(if yes { "Yes" } else { "No" }.into()))],
    }
}

fn draw_affect(size: u32, i: usize, rng: &mut ChaCha8Rng) -> Sample {
    let s = size as f64;
    let mut c = Canvas::new(size, rng);
    let k = i % 8;
    let cx = s / 2.0 + rng.random_range(-1.5..1.5);
    let cy = s / 2.0 + rng.random_range(-1.5..1.5);
    let r = s * 0.4;
    face(&mut c, cx, cy, r, 0.0);
    let w = (r * 1.1) as i32;
    let h = (r * 0.35) as i32;
    c.rect(cx as i32 - w / 2, (cy + r * 0.35) as i32, w, h, PALETTE[k]);
    let label = ((b'a' + k as u8) as char).to_string();
    Sample {
        img: c.img,
        boxes: BBoxSet::empty(),
        targets: vec![(TaskId::AffectNet, Target::Label(label))],
    }
}

fn draw_hagrid(size: u32, i: usize, classes: usize, labels: &[String], rng: &mut ChaCha8Rng) -> Sample {
    let mut c = Canvas::new(size, rng);
    let k = i % classes;
    // palm in one quadrant, colored by class; quadrant and hue both vary with k
    let s = size as i32;
    let palm = s * 2 / 5;
    let (qx, qy) = ((k % 2) as i32, ((k / 2) % 2) as i32);
    let jitter = s / 16;
    let x = qx * s / 2 + (s / 2 - palm) / 2 + rng.random_range(-jitter..=jitter);
    let y = qy * s / 2 + (s / 2 - palm) / 2 + rng.random_range(-jitter..=jitter);
    c.rect(x, y, palm, palm, hue(k as f64 / classes as f64));
    let finger = (palm / 5).max(1);
    for f in 0..3 {
        c.rect(x + f * 2 * finger, y - finger, finger, finger, SKIN);
    }
    Sample {
        img: c.img,
        boxes: BBoxSet::empty(),
        targets: vec![(TaskId::HagridV2, Target::Label(labels[k].clone()))],
    }
}

fn draw_pisc(size: u32, i: usize, rng: &mut ChaCha8Rng) -> Sample {
    let s = size as f64;
    let mut c = Canvas::new(size, rng);
    let relation = i % 6;
    let color = PALETTE[relation];
    let mut boxes = Vec::new();
    for half in 0..2 {
        let bw = s * 0.22;
        let bh = s * 0.5;
        let x0 = half as f64 * s / 2.0 + rng.random_range(1.0..s / 2.0 - bw - 1.0);
        let y0 = rng.random_range(s * 0.2..s - bh - 1.0);
        c.disc(x0 + bw / 2.0, y0 + bw * 0.4, bw * 0.4, SKIN);
        c.rect(
            x0 as i32,
            (y0 + bw * 0.8) as i32,
            bw as i32,
            (bh - bw * 0.8) as i32,
            color,
        );
        boxes.push(norm_box(s, x0, y0, x0 + bw, y0 + bh));
    }
    let rel = ((b'a' + relation as u8) as char).to_string();
    let dom = ((b'a' + pisc_domain_of(relation) as u8) as char).to_string();
    Sample {
        img: c.img,
        boxes: BBoxSet::new(boxes).expect("two boxes"),
        targets: vec![
            (TaskId::PiscDomain, Target::Label(dom)),
            (TaskId::PiscRelation, Target::Label(rel)),
        ],
    }
}

fn draw_gaze(size: u32, split: Split, rng: &mut ChaCha8Rng) -> Sample {
    let s = size as f64;
    let mut c = Canvas::new(size, rng);
    let hr = s * 0.1;
    let hx = rng.random_range(hr + 1.0..s - hr - 1.0);
    let hy = rng.random_range(hr + 1.0..s - hr - 1.0);
    let (tx, ty) = loop {
        let tx = rng.random_range(2.0..s - 3.0);
        let ty = rng.random_range(2.0..s - 3.0);
        if (tx - hx).hypot(ty - hy) > 2.0 * hr + 4.0 {
            break (tx.round(), ty.round());
        }
    };
    face(
        &mut c,
        hx,
        hy,
        hr,
        ((tx - hx) / (tx - hx).hypot(ty - hy)).clamp(-1.0, 1.0),
    );
    c.disc(tx, ty, 2.2, [255, 0, 0]);
    let head = norm_box(s, hx - hr, hy - hr, hx + hr, hy + hr);
    let p0 = (tx / (s - 1.0), ty / (s - 1.0));
    let mut points = vec![p0];
    if split == Split::Test {
        let jitter = Normal::new(0.0, 0.02).expect("valid normal");
        for _ in 0..9 {
            let x = (p0.0 + jitter.sample(rng)).clamp(0.0, 1.0);
            let y = (p0.1 + jitter.sample(rng)).clamp(0.0, 1.0);
            points.push((x, y));
        }
    }
    Sample {
        img: c.img,
        boxes: BBoxSet::new(vec![head]).expect("one box"),
        targets: vec![(TaskId::GazeFollow, Target::Points(points))],
    }
}

fn file_stem(task: SocialTask) -> &'static str {
    match task {
        SocialTask::HagridV2 => "hagridv2",
        SocialTask::Pisc => "pisc",
        SocialTask::Lam => "lam",
        SocialTask::GazeFollow => "gazefollow",
        SocialTask::AffectNet => "affectnet",
    }
}

/// Writes images under `out/images/<task>/` and one manifest per task.
pub fn generate_fixtures(out: &Path, config: &FixtureConfig) -> Result<FixtureSummary> {
    if config.image_size < 16 {
        return Err(Error::config("fixture image_size must be at least 16"));
    }
    if config.hagrid_classes == 0 || config.hagrid_classes > 33 {
        return Err(Error::config("hagrid_classes must be within 1..=33"));
    }
    let registry = TaskRegistry::builtin();
    let hagrid_labels = registry.get(TaskId::HagridV2)?.labels.clone();
    let mut summary = FixtureSummary::default();
    for &task in &config.tasks {
        let t_index = SocialTask::ALL.iter().position(|&t| t == task).expect("known task");
        let stem = file_stem(task);
        let img_dir = out.join("images").join(stem);
        fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
        let manifest_rel = PathBuf::from(format!("{stem}.jsonl"));
        let manifest_path = out.join(&manifest_rel);
        let mut file = fs::File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(t_index as u64 + 1);
        let splits: &[(Split, usize)] = if task == SocialTask::GazeFollow {
            &[(Split::Train, config.train), (Split::Test, config.test)]
        } else {
            &[
                (Split::Train, config.train),
                (Split::Val, config.val),
                (Split::Test, config.test),
            ]
        };
        for &(split, n) in splits {
            for i in 0..n {
                let sample = match task {
                    SocialTask::Lam => draw_lam(config.image_size, i, &mut rng),
                    SocialTask::AffectNet => draw_affect(config.image_size, i, &mut rng),
                    SocialTask::HagridV2 => {
                        draw_hagrid(config.image_size, i, config.hagrid_classes, &hagrid_labels, &mut rng)
                    }
                    SocialTask::Pisc => draw_pisc(config.image_size, i, &mut rng),
                    SocialTask::GazeFollow => draw_gaze(config.image_size, split, &mut rng),
                };
                let name = format!("images/{stem}/{split}_{i:04}.png");
                let path = out.join(&name);
                sample.img.save(&path).map_err(|e| Error::Image {
                    path: path.clone(),
                    msg: e.to_string(),
                })?;
                for (tid, target) in &sample.targets {
                    let line = manifest_line(*tid, &name, &sample.boxes, target, split);
                    writeln!(file, "{line}").map_err(|e| Error::io(&manifest_path, e))?;
                    summary.records += 1;
                }
            }
        }
        summary.manifests.push(manifest_rel);
    }
    Ok(summary)
}
