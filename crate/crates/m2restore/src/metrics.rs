//! Image-quality and clustering metrics: PSNR, windowed SSIM, silhouette.

use crate::data::Image;
use crate::error::{Error, Result};

/// 10·log10(peak² / MSE). Identical images report +inf.
pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    if a.h != b.h || a.w != b.w {
        return Err(Error::Shape(format!(
            "psnr: {}x{} vs {}x{}",
            a.h, a.w, b.h, b.w
        )));
    }
    let n = a.data.len() as f64;
    let mse: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

const SSIM_WINDOW: usize = 8;
const SSIM_STRIDE: usize = 4;

/// Mean windowed SSIM on the channel-mean grayscale image: 8x8 windows,
/// stride 4, c1=(0.01·peak)², c2=(0.03·peak)².
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    if a.h != b.h || a.w != b.w {
        return Err(Error::Shape(format!(
            "ssim: {}x{} vs {}x{}",
            a.h, a.w, b.h, b.w
        )));
    }
    if a.h < SSIM_WINDOW || a.w < SSIM_WINDOW {
        return Err(Error::Contract(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            a.h, a.w
        )));
    }
    let gray = |img: &Image| -> Vec<f64> {
        let hw = img.h * img.w;
        (0..hw)
            .map(|i| {
                (img.data[i] as f64 + img.data[hw + i] as f64 + img.data[2 * hw + i] as f64) / 3.0
            })
            .collect()
    };
    let ga = gray(a);
    let gb = gray(b);
    let (h, w) = (a.h, a.w);
    let peak = 1.0f64;
    let c1 = (0.01 * peak) * (0.01 * peak);
    let c2 = (0.03 * peak) * (0.03 * peak);
    let npx = (SSIM_WINDOW * SSIM_WINDOW) as f64;

    let mut total = 0.0;
    let mut count = 0usize;
    let mut y0 = 0;
    while y0 + SSIM_WINDOW <= h {
        let mut x0 = 0;
        while x0 + SSIM_WINDOW <= w {
            let (mut ma, mut mb) = (0.0, 0.0);
            for y in y0..y0 + SSIM_WINDOW {
                for x in x0..x0 + SSIM_WINDOW {
                    ma += ga[y * w + x];
                    mb += gb[y * w + x];
                }
            }
            ma /= npx;
            mb /= npx;
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for y in y0..y0 + SSIM_WINDOW {
                for x in x0..x0 + SSIM_WINDOW {
                    let da = ga[y * w + x] - ma;
                    let db = gb[y * w + x] - mb;
                    va += da * da;
                    vb += db * db;
                    cov += da * db;
                }
            }
            va /= npx;
            vb /= npx;
            cov /= npx;
            let s = ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            total += s;
            count += 1;
            x0 += SSIM_STRIDE;
        }
        y0 += SSIM_STRIDE;
    }
    Ok(total / count as f64)
}

/// Mean silhouette score over points with Euclidean distance. Points whose
/// intra- and inter-cluster distances are both zero score 0 by convention.
pub fn silhouette(vectors: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if vectors.len() != labels.len() {
        return Err(Error::Shape(format!(
            "silhouette: {} vectors vs {} labels",
            vectors.len(),
            labels.len()
        )));
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::Contract(
            "silhouette needs at least 2 distinct labels".into(),
        ));
    }
    for &c in &classes {
        if labels.iter().filter(|&&l| l == c).count() < 2 {
            return Err(Error::Contract(format!(
                "silhouette: label {c} has fewer than 2 members"
            )));
        }
    }

    let dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };

    let n = vectors.len();
    let mut total = 0.0;
    for i in 0..n {
        let own = labels[i];
        // a: mean distance to other members of own cluster
        let mut a_sum = 0.0;
        let mut a_cnt = 0usize;
        for j in 0..n {
            if j != i && labels[j] == own {
                a_sum += dist(&vectors[i], &vectors[j]);
                a_cnt += 1;
            }
        }
        let a = a_sum / a_cnt as f64;
        // b: smallest mean distance to any other cluster
        let mut b = f64::INFINITY;
        for &c in &classes {
            if c == own {
                continue;
            }
            let mut s = 0.0;
            let mut cnt = 0usize;
            for j in 0..n {
                if labels[j] == c {
                    s += dist(&vectors[i], &vectors[j]);
                    cnt += 1;
                }
            }
            b = b.min(s / cnt as f64);
        }
        let m = a.max(b);
        total += if m == 0.0 { 0.0 } else { (b - a) / m };
    }
    Ok(total / n as f64)
}
