//! Synthetic degradation corpus: procedural clean scenes, four weather
//! degraders, binary PPM storage and a seed manifest so any split can be
//! regenerated bit-exactly.

use std::fmt;
use std::fs;
use std::io::{Read as _, Write as _};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Planar RGB image, values in [0,1], layout [3,H,W].
#[derive(Clone, PartialEq)]
pub struct Image {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(h: usize, w: usize) -> Self {
        Image { h, w, data: vec![0.0; 3 * h * w] }
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.h + y) * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.h + y) * self.w + x] = v;
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Batch-of-one tensor [1,3,H,W].
    pub fn to_tensor<S: Scalar>(&self) -> Result<Tensor<S>> {
        let data = self.data.iter().map(|&v| S::of(v as f64)).collect();
        Tensor::from_vec(&[1, 3, self.h, self.w], data)
    }

    /// Inverse of `to_tensor`, clamping to [0,1].
    pub fn from_tensor<S: Scalar>(t: &Tensor<S>) -> Result<Image> {
        let s = t.shape();
        if s.len() != 4 || s[0] != 1 || s[1] != 3 {
            return Err(Error::Shape(format!("image tensor must be [1,3,H,W], got {:?}", s)));
        }
        let mut img = Image::new(s[2], s[3]);
        for (o, v) in img.data.iter_mut().zip(t.data()) {
            *o = (v.as_f64() as f32).clamp(0.0, 1.0);
        }
        Ok(img)
    }

    pub fn mean_abs_diff(&self, other: &Image) -> f32 {
        let n = self.data.len() as f32;
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .sum::<f32>()
            / n
    }
}

/// Degradation classes. `Unknown` is the catch-all prior class and has no
/// generator of its own.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DegType {
    Rain,
    Snow,
    Haze,
    Raindrop,
}

/// Number of prior classes: the four generated types plus "unknown".
pub const NUM_CLASSES: usize = 5;
/// Prior-class index reserved for unrecognized degradations.
pub const UNKNOWN_CLASS: usize = 4;

impl DegType {
    pub fn label(self) -> usize {
        match self {
            DegType::Rain => 0,
            DegType::Snow => 1,
            DegType::Haze => 2,
            DegType::Raindrop => 3,
        }
    }

    pub fn from_label(label: usize) -> Option<DegType> {
        match label {
            0 => Some(DegType::Rain),
            1 => Some(DegType::Snow),
            2 => Some(DegType::Haze),
            3 => Some(DegType::Raindrop),
            _ => None,
        }
    }

    pub fn parse(s: &str) -> Result<DegType> {
        match s {
            "rain" => Ok(DegType::Rain),
            "snow" => Ok(DegType::Snow),
            "haze" => Ok(DegType::Haze),
            "raindrop" => Ok(DegType::Raindrop),
            other => Err(Error::Config(format!("unknown degradation type '{other}'"))),
        }
    }
}

impl fmt::Display for DegType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DegType::Rain => "rain",
            DegType::Snow => "snow",
            DegType::Haze => "haze",
            DegType::Raindrop => "raindrop",
        };
        f.write_str(s)
    }
}

/// Parameter ranges for each degrader; sampled per image from the sample
/// seed. Defaults are tuned so degradations are clearly visible (baseline
/// PSNR well below clean) but recoverable.
#[derive(Clone, Debug)]
pub struct DegradeParams {
    pub rain_count: (usize, usize),
    pub rain_len: (usize, usize),
    pub rain_angle_deg: (f64, f64),
    pub rain_intensity: (f64, f64),
    pub snow_count: (usize, usize),
    pub snow_radius: (f64, f64),
    pub snow_opacity: (f64, f64),
    pub haze_t: (f64, f64),
    pub haze_airlight: (f64, f64),
    pub drop_count: (usize, usize),
    pub drop_radius: (f64, f64),
    pub drop_lift: (f64, f64),
}

impl Default for DegradeParams {
    fn default() -> Self {
        DegradeParams {
            rain_count: (40, 80),
            rain_len: (6, 14),
            rain_angle_deg: (70.0, 110.0),
            rain_intensity: (0.25, 0.55),
            snow_count: (30, 60),
            snow_radius: (1.0, 2.5),
            snow_opacity: (0.5, 0.9),
            haze_t: (0.35, 0.6),
            haze_airlight: (0.8, 0.95),
            drop_count: (6, 12),
            drop_radius: (3.0, 6.0),
            drop_lift: (0.1, 0.25),
        }
    }
}

fn range_f(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi <= lo { lo } else { rng.gen_range(lo..hi) }
}

fn range_u(rng: &mut ChaCha8Rng, (lo, hi): (usize, usize)) -> usize {
    if hi <= lo { lo } else { rng.gen_range(lo..=hi) }
}

/// Procedural clean scene: vertical sky gradient, random rectangles and
/// disks, mild texture noise. Deterministic per seed.
pub fn synth_clean(seed: u64, h: usize, w: usize) -> Result<Image> {
    if h < 16 || w < 16 {
        return Err(Error::Contract(format!("synth_clean needs H,W >= 16, got {h}x{w}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = Image::new(h, w);

    // sky gradient between two random colors
    let top: Vec<f32> = (0..3).map(|_| rng.gen_range(0.3f32..0.9)).collect();
    let bot: Vec<f32> = (0..3).map(|_| rng.gen_range(0.1f32..0.7)).collect();
    for c in 0..3 {
        for y in 0..h {
            let a = y as f32 / (h - 1) as f32;
            let v = top[c] * (1.0 - a) + bot[c] * a;
            for x in 0..w {
                img.set(c, y, x, v);
            }
        }
    }

    // rectangles
    for _ in 0..rng.gen_range(3..8) {
        let col: Vec<f32> = (0..3).map(|_| rng.gen_range(0.05f32..0.95)).collect();
        let rw = rng.gen_range(w / 8..w / 2);
        let rh = rng.gen_range(h / 8..h / 2);
        let x0 = rng.gen_range(0..w - rw);
        let y0 = rng.gen_range(0..h - rh);
        for c in 0..3 {
            for y in y0..y0 + rh {
                for x in x0..x0 + rw {
                    img.set(c, y, x, col[c]);
                }
            }
        }
    }

    // disks
    for _ in 0..rng.gen_range(2..6) {
        let col: Vec<f32> = (0..3).map(|_| rng.gen_range(0.05f32..0.95)).collect();
        let r = rng.gen_range(2.0..(w.min(h) as f64 / 4.0));
        let cx = rng.gen_range(0.0..w as f64);
        let cy = rng.gen_range(0.0..h as f64);
        let r2 = r * r;
        for y in 0..h {
            for x in 0..w {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                if dx * dx + dy * dy <= r2 {
                    for c in 0..3 {
                        img.set(c, y, x, col[c]);
                    }
                }
            }
        }
    }

    // fine texture noise
    for v in &mut img.data {
        let n: f64 = rng.sample(StandardNormal);
        *v += (n * 0.02) as f32;
    }
    img.clamp01();
    Ok(img)
}

fn add_rain(img: &mut Image, p: &DegradeParams, rng: &mut ChaCha8Rng) {
    let n = range_u(rng, p.rain_count);
    for _ in 0..n {
        let len = range_u(rng, p.rain_len) as f64;
        let ang = range_f(rng, p.rain_angle_deg).to_radians();
        let inten = range_f(rng, p.rain_intensity) as f32;
        let x0 = rng.gen_range(0.0..img.w as f64);
        let y0 = rng.gen_range(0.0..img.h as f64);
        let (dx, dy) = (ang.cos(), ang.sin());
        let steps = (len * 2.0) as usize;
        for s in 0..steps {
            let t = s as f64 / 2.0;
            let x = (x0 + t * dx).round();
            let y = (y0 + t * dy).round();
            if x < 0.0 || y < 0.0 || x as usize >= img.w || y as usize >= img.h {
                continue;
            }
            let (xi, yi) = (x as usize, y as usize);
            for c in 0..3 {
                let v = img.at(c, yi, xi) + inten;
                img.set(c, yi, xi, v);
            }
        }
    }
    img.clamp01();
}

fn add_snow(img: &mut Image, p: &DegradeParams, rng: &mut ChaCha8Rng) {
    let n = range_u(rng, p.snow_count);
    for _ in 0..n {
        let r = range_f(rng, p.snow_radius);
        let op = range_f(rng, p.snow_opacity) as f32;
        let cx = rng.gen_range(0.0..img.w as f64);
        let cy = rng.gen_range(0.0..img.h as f64);
        let ri = r.ceil() as i64;
        for oy in -ri..=ri {
            for ox in -ri..=ri {
                let x = cx as i64 + ox;
                let y = cy as i64 + oy;
                if x < 0 || y < 0 || x as usize >= img.w || y as usize >= img.h {
                    continue;
                }
                let d2 = (ox * ox + oy * oy) as f64 / (r * r);
                if d2 > 1.0 {
                    continue;
                }
                let alpha = op * (1.0 - d2 as f32);
                let (xi, yi) = (x as usize, y as usize);
                for c in 0..3 {
                    let v = img.at(c, yi, xi) * (1.0 - alpha) + alpha;
                    img.set(c, yi, xi, v);
                }
            }
        }
    }
    img.clamp01();
}

fn add_haze(img: &mut Image, p: &DegradeParams, rng: &mut ChaCha8Rng) {
    // scattering law I = J*t + A*(1-t), constant t and airlight per image
    let t = range_f(rng, p.haze_t) as f32;
    let a = range_f(rng, p.haze_airlight) as f32;
    for v in &mut img.data {
        *v = *v * t + a * (1.0 - t);
    }
    img.clamp01();
}

fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    let mut sum = 0.0f64;
    for i in -radius..=radius {
        let v = (-(i * i) as f64 / (2.0 * sigma * sigma)).exp();
        kernel.push(v);
        sum += v;
    }
    for k in &mut kernel {
        *k /= sum;
    }
    let (h, w) = (img.h as i64, img.w as i64);
    let mut tmp = Image::new(img.h, img.w);
    for c in 0..3 {
        for y in 0..img.h {
            for x in 0..img.w {
                let mut acc = 0.0f64;
                for (ki, i) in (-radius..=radius).enumerate() {
                    let xs = (x as i64 + i).clamp(0, w - 1) as usize;
                    acc += kernel[ki] * img.at(c, y, xs) as f64;
                }
                tmp.set(c, y, x, acc as f32);
            }
        }
    }
    let mut out = Image::new(img.h, img.w);
    for c in 0..3 {
        for y in 0..img.h {
            for x in 0..img.w {
                let mut acc = 0.0f64;
                for (ki, i) in (-radius..=radius).enumerate() {
                    let ys = (y as i64 + i).clamp(0, h - 1) as usize;
                    acc += kernel[ki] * tmp.at(c, ys, x) as f64;
                }
                out.set(c, y, x, acc as f32);
            }
        }
    }
    out
}

fn add_raindrops(img: &mut Image, p: &DegradeParams, rng: &mut ChaCha8Rng) {
    let n = range_u(rng, p.drop_count);
    let blurred = gaussian_blur(img, 1.5);
    for _ in 0..n {
        let r = range_f(rng, p.drop_radius);
        let lift = range_f(rng, p.drop_lift) as f32;
        let cx = rng.gen_range(0.0..img.w as f64);
        let cy = rng.gen_range(0.0..img.h as f64);
        let ri = r.ceil() as i64;
        for oy in -ri..=ri {
            for ox in -ri..=ri {
                let x = cx as i64 + ox;
                let y = cy as i64 + oy;
                if x < 0 || y < 0 || x as usize >= img.w || y as usize >= img.h {
                    continue;
                }
                let d2 = (ox * ox + oy * oy) as f64 / (r * r);
                if d2 > 1.0 {
                    continue;
                }
                let (xi, yi) = (x as usize, y as usize);
                for c in 0..3 {
                    img.set(c, yi, xi, blurred.at(c, yi, xi) + lift);
                }
            }
        }
    }
    img.clamp01();
}

/// Apply one degradation type to a clean image. Deterministic per seed.
pub fn degrade(clean: &Image, ty: DegType, params: &DegradeParams, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = clean.clone();
    match ty {
        DegType::Rain => add_rain(&mut img, params, &mut rng),
        DegType::Snow => add_snow(&mut img, params, &mut rng),
        DegType::Haze => add_haze(&mut img, params, &mut rng),
        DegType::Raindrop => add_raindrops(&mut img, params, &mut rng),
    }
    img
}

/// One corpus entry. Regenerable bit-exactly from (seed, label, params).
#[derive(Clone)]
pub struct Sample {
    pub clean: Image,
    pub degraded: Image,
    pub label: usize,
    pub seed: u64,
}

/// Build a sample from scratch: clean scene from `seed`, degradation from
/// `seed ^ 0x9e3779b97f4a7c15` so the two streams never collide.
pub fn make_sample(seed: u64, ty: DegType, params: &DegradeParams, h: usize, w: usize) -> Result<Sample> {
    let clean = synth_clean(seed, h, w)?;
    let degraded = degrade(&clean, ty, params, seed ^ 0x9e37_79b9_7f4a_7c15);
    Ok(Sample { clean, degraded, label: ty.label(), seed })
}

// ---- PPM (P6, 8-bit) ----

pub fn write_ppm(path: &Path, img: &Image) -> Result<()> {
    let mut buf = Vec::with_capacity(32 + 3 * img.h * img.w);
    write!(buf, "P6\n{} {}\n255\n", img.w, img.h).map_err(Error::from)?;
    for y in 0..img.h {
        for x in 0..img.w {
            for c in 0..3 {
                let v = (img.at(c, y, x).clamp(0.0, 1.0) * 255.0).round() as u8;
                buf.push(v);
            }
        }
    }
    fs::write(path, buf).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    parse_ppm(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn parse_ppm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0usize;
    let mut token = || -> Result<&[u8]> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PPM header".into()));
        }
        Ok(&bytes[start..pos])
    };
    if token()? != b"P6" {
        return Err(Error::Format("not a P6 PPM".into()));
    }
    let parse_num = |t: &[u8]| -> Result<usize> {
        std::str::from_utf8(t)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("bad PPM header number".into()))
    };
    let w = parse_num(token()?)?;
    let h = parse_num(token()?)?;
    let maxv = parse_num(token()?)?;
    if maxv != 255 {
        return Err(Error::Format(format!("unsupported PPM max value {maxv}")));
    }
    let data_start = pos + 1; // single whitespace byte after maxval
    let need = 3 * h * w;
    if bytes.len() < data_start + need {
        return Err(Error::Format("truncated PPM payload".into()));
    }
    let mut img = Image::new(h, w);
    let payload = &bytes[data_start..data_start + need];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                img.set(c, y, x, payload[(y * w + x) * 3 + c] as f32 / 255.0);
            }
        }
    }
    Ok(img)
}

// ---- corpus on disk ----

/// One manifest row: enough to regenerate the sample bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub seed: u64,
    pub ty: DegType,
    pub h: usize,
    pub w: usize,
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&format!("id={} seed={} type={} h={} w={}\n", e.id, e.seed, e.ty, e.h, e.w));
    }
    fs::write(path, out).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let mut entries = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut id = None;
        let mut seed = None;
        let mut ty = None;
        let mut h = None;
        let mut w = None;
        for field in line.split_whitespace() {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("manifest line {}: bad field '{field}'", ln + 1)))?;
            match k {
                "id" => id = Some(v.to_string()),
                "seed" => seed = v.parse().ok(),
                "type" => ty = Some(DegType::parse(v)?),
                "h" => h = v.parse().ok(),
                "w" => w = v.parse().ok(),
                other => {
                    return Err(Error::Format(format!(
                        "manifest line {}: unknown key '{other}'",
                        ln + 1
                    )))
                }
            }
        }
        let entry = ManifestEntry {
            id: id.ok_or_else(|| Error::Format(format!("manifest line {}: missing id", ln + 1)))?,
            seed: seed.ok_or_else(|| Error::Format(format!("manifest line {}: missing seed", ln + 1)))?,
            ty: ty.ok_or_else(|| Error::Format(format!("manifest line {}: missing type", ln + 1)))?,
            h: h.ok_or_else(|| Error::Format(format!("manifest line {}: missing h", ln + 1)))?,
            w: w.ok_or_else(|| Error::Format(format!("manifest line {}: missing w", ln + 1)))?,
        };
        entries.push(entry);
    }
    Ok(entries)
}

/// Write one split (images + manifest) under `dir`. Sample ids are
/// `<type>_<index>`; seeds derive from `base_seed` deterministically.
pub fn write_split(
    dir: &Path,
    types: &[DegType],
    per_type: usize,
    h: usize,
    w: usize,
    params: &DegradeParams,
    base_seed: u64,
) -> Result<Vec<ManifestEntry>> {
    fs::create_dir_all(dir).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.display()))))?;
    let mut entries = Vec::new();
    for (ti, &ty) in types.iter().enumerate() {
        for i in 0..per_type {
            let seed = base_seed
                .wrapping_mul(0x0100_0000_01b3)
                .wrapping_add((ti * 1_000_003 + i) as u64);
            let sample = make_sample(seed, ty, params, h, w)?;
            let id = format!("{ty}_{i:04}");
            write_ppm(&dir.join(format!("{id}_clean.ppm")), &sample.clean)?;
            write_ppm(&dir.join(format!("{id}_degraded.ppm")), &sample.degraded)?;
            entries.push(ManifestEntry { id, seed, ty, h, w });
        }
    }
    write_manifest(&dir.join("manifest.txt"), &entries)?;
    Ok(entries)
}

/// Load a split back from disk via its manifest.
pub fn load_split(dir: &Path) -> Result<Vec<Sample>> {
    let entries = read_manifest(&dir.join("manifest.txt"))?;
    let mut samples = Vec::with_capacity(entries.len());
    for e in &entries {
        let clean = read_ppm(&dir.join(format!("{}_clean.ppm", e.id)))?;
        let degraded = read_ppm(&dir.join(format!("{}_degraded.ppm", e.id)))?;
        samples.push(Sample { clean, degraded, label: e.ty.label(), seed: e.seed });
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synth_clean_is_deterministic() {
        let a = synth_clean(7, 32, 32).unwrap();
        let b = synth_clean(7, 32, 32).unwrap();
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn synth_clean_stays_in_unit_range() {
        for seed in 0..20 {
            let img = synth_clean(seed, 32, 48).unwrap();
            assert!(img.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn different_seeds_give_different_images() {
        let mut distinct = 0;
        for pair in 0..100u64 {
            let a = synth_clean(2 * pair, 32, 32).unwrap();
            let b = synth_clean(2 * pair + 1, 32, 32).unwrap();
            if a.mean_abs_diff(&b) > 0.01 {
                distinct += 1;
            }
        }
        assert!(distinct >= 99, "only {distinct}/100 pairs differed");
    }

    #[test]
    fn haze_with_full_transmission_is_identity() {
        let clean = synth_clean(1, 32, 32).unwrap();
        let p = DegradeParams { haze_t: (1.0, 1.0), ..Default::default() };
        let hazy = degrade(&clean, DegType::Haze, &p, 9);
        assert_eq!(clean.data, hazy.data);
    }

    #[test]
    fn haze_with_zero_transmission_is_airlight() {
        let clean = synth_clean(2, 32, 32).unwrap();
        let p = DegradeParams {
            haze_t: (0.0, 0.0),
            haze_airlight: (0.9, 0.9),
            ..Default::default()
        };
        let hazy = degrade(&clean, DegType::Haze, &p, 9);
        assert!(hazy.data.iter().all(|&v| (v - 0.9).abs() < 1e-6));
    }

    #[test]
    fn empty_overlays_are_identity() {
        let clean = synth_clean(3, 32, 32).unwrap();
        let p = DegradeParams {
            rain_count: (0, 0),
            snow_count: (0, 0),
            drop_count: (0, 0),
            ..Default::default()
        };
        for ty in [DegType::Rain, DegType::Snow, DegType::Raindrop] {
            let out = degrade(&clean, ty, &p, 4);
            assert_eq!(clean.data, out.data, "{ty} not identity at null params");
        }
    }

    #[test]
    fn degraders_are_deterministic_and_visible() {
        let clean = synth_clean(11, 64, 64).unwrap();
        let p = DegradeParams::default();
        for ty in [DegType::Rain, DegType::Snow, DegType::Haze, DegType::Raindrop] {
            let a = degrade(&clean, ty, &p, 5);
            let b = degrade(&clean, ty, &p, 5);
            assert_eq!(a.data, b.data);
            assert!(a.mean_abs_diff(&clean) > 0.002, "{ty} barely changed the image");
            assert!(a.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn ppm_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let img = synth_clean(5, 24, 40).unwrap();
        let path = dir.path().join("x.ppm");
        write_ppm(&path, &img).unwrap();
        let back = read_ppm(&path).unwrap();
        assert_eq!(back.h, 24);
        assert_eq!(back.w, 40);
        // storage quantizes to 8 bits; a second round trip must be stable
        let path2 = dir.path().join("y.ppm");
        write_ppm(&path2, &back).unwrap();
        let again = read_ppm(&path2).unwrap();
        assert_eq!(back.data, again.data);
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn read_ppm_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ppm");
        std::fs::write(&path, b"P5\n2 2\n255\nxxxx").unwrap();
        assert!(read_ppm(&path).is_err());
    }

    #[test]
    fn split_regeneration_is_bit_exact() {
        let types = [DegType::Rain, DegType::Haze];
        let p = DegradeParams::default();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        write_split(d1.path(), &types, 3, 32, 32, &p, 42).unwrap();
        write_split(d2.path(), &types, 3, 32, 32, &p, 42).unwrap();
        for entry in std::fs::read_dir(d1.path()).unwrap() {
            let name = entry.unwrap().file_name();
            let a = std::fs::read(d1.path().join(&name)).unwrap();
            let b = std::fs::read(d2.path().join(&name)).unwrap();
            assert_eq!(a, b, "{name:?} differs between regenerations");
        }
    }

    #[test]
    fn manifest_round_trip_and_load() {
        let types = [DegType::Snow];
        let p = DegradeParams::default();
        let dir = tempfile::tempdir().unwrap();
        let entries = write_split(dir.path(), &types, 2, 32, 32, &p, 1).unwrap();
        let back = read_manifest(&dir.path().join("manifest.txt")).unwrap();
        assert_eq!(entries, back);
        let samples = load_split(dir.path()).unwrap();
        assert_eq!(samples.len(), 2);
        assert_eq!(samples[0].label, DegType::Snow.label());
    }

    #[test]
    fn manifest_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.txt");
        std::fs::write(&path, "id=a seed=1 type=rain h=32 w=32 bogus=1\n").unwrap();
        assert!(read_manifest(&path).is_err());
    }
}
