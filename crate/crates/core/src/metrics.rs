//! Distribution metrics (FID, KID) over extractor embeddings and label
//! agreement metrics (mIoU, pixel accuracy).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use semtex_tensor::nn::Conv2d;
use semtex_tensor::{Binder, Graph, ParamSet, Tensor};

use crate::image::{LabelMap, RgbImage};
use crate::{Error, Result};

/// Sample mean and unbiased covariance of a feature set.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub count: usize,
}

impl FeatureStats {
    /// Two-pass estimate from rows of equal length.
    pub fn from_features(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::Precondition(format!("need at least 2 samples, got {}", rows.len())));
        }
        let d = rows[0].len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Shape("feature rows differ in length".into()));
        }
        let n = rows.len();
        let mut mean = DVector::zeros(d);
        for r in rows {
            mean += DVector::from_column_slice(r);
        }
        mean /= n as f64;
        let mut centered = DMatrix::zeros(n, d);
        for (i, r) in rows.iter().enumerate() {
            for j in 0..d {
                centered[(i, j)] = r[j] - mean[j];
            }
        }
        let mut cov = centered.transpose() * &centered / (n - 1) as f64;
        cov = (&cov + cov.transpose()) * 0.5;
        Ok(Self { mean, cov, count: n })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn sqrt_psd(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m.clone());
    let vals = clamp_eigenvalues(eig.eigenvalues.as_slice(), what)?;
    let s = DMatrix::from_diagonal(&DVector::from_iterator(vals.len(), vals.iter().map(|v| v.sqrt())));
    Ok(&eig.eigenvectors * s * eig.eigenvectors.transpose())
}

fn clamp_eigenvalues(vals: &[f64], what: &str) -> Result<Vec<f64>> {
    vals.iter()
        .map(|&v| {
            if v >= 0.0 {
                Ok(v)
            } else if v > -1e-6 {
                Ok(0.0)
            } else {
                Err(Error::Numerical(format!("{what} has eigenvalue {v:e}")))
            }
        })
        .collect()
}

/// Fréchet distance between two Gaussians. The trace of `(ΣaΣb)^½` is
/// taken from the eigenvalues of the symmetric `Σa^½ Σb Σa^½`.
pub fn fid(a: &FeatureStats, b: &FeatureStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("feature dims differ: {} vs {}", a.dim(), b.dim())));
    }
    let diff = &a.mean - &b.mean;
    let sa = sqrt_psd(&a.cov, "covariance")?;
    let mut prod = &sa * &b.cov * &sa;
    prod = (&prod + prod.transpose()) * 0.5;
    let vals = clamp_eigenvalues(SymmetricEigen::new(prod).eigenvalues.as_slice(), "covariance product")?;
    let tr_sqrt: f64 = vals.iter().map(|v| v.sqrt()).sum();
    Ok(diff.dot(&diff) + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt)
}

fn poly_kernel(x: &[f64], y: &[f64]) -> f64 {
    let d = x.len() as f64;
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    (dot / d + 1.0).powi(3)
}

/// Unbiased squared MMD with the cubic polynomial kernel.
pub fn kid(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<f64> {
    let (m, k) = (x.len(), y.len());
    if m < 2 || k < 2 {
        return Err(Error::Precondition(format!("KID needs >= 2 samples per set, got {m} and {k}")));
    }
    let d = x[0].len();
    if x.iter().chain(y).any(|r| r.len() != d) {
        return Err(Error::Shape("feature rows differ in length".into()));
    }
    let within = |s: &[Vec<f64>]| {
        let mut acc = 0.0;
        for i in 0..s.len() {
            for j in 0..s.len() {
                if i != j {
                    acc += poly_kernel(&s[i], &s[j]);
                }
            }
        }
        acc / (s.len() * (s.len() - 1)) as f64
    };
    let mut cross = 0.0;
    for a in x {
        for b in y {
            cross += poly_kernel(a, b);
        }
    }
    Ok(within(x) + within(y) - 2.0 * cross / (m * k) as f64)
}

fn check_pair(pred: &LabelMap, gt: &LabelMap) -> Result<()> {
    if (pred.width, pred.height) != (gt.width, gt.height) {
        return Err(Error::Shape(format!(
            "label maps differ in size: {}x{} vs {}x{}",
            pred.width, pred.height, gt.width, gt.height
        )));
    }
    Ok(())
}

/// Mean IoU over classes present in either map.
pub fn miou(pred: &LabelMap, gt: &LabelMap, classes: usize) -> Result<f64> {
    check_pair(pred, gt)?;
    pred.check_classes(classes)?;
    gt.check_classes(classes)?;
    let mut inter = vec![0usize; classes];
    let mut union = vec![0usize; classes];
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        if p == g {
            inter[p as usize] += 1;
            union[p as usize] += 1;
        } else {
            union[p as usize] += 1;
            union[g as usize] += 1;
        }
    }
    let ious: Vec<f64> = (0..classes)
        .filter(|&c| union[c] > 0)
        .map(|c| inter[c] as f64 / union[c] as f64)
        .collect();
    Ok(if ious.is_empty() { 1.0 } else { ious.iter().sum::<f64>() / ious.len() as f64 })
}

pub fn pixel_accuracy(pred: &LabelMap, gt: &LabelMap) -> Result<f64> {
    check_pair(pred, gt)?;
    let hits = pred.data.iter().zip(&gt.data).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.data.len().max(1) as f64)
}

/// Nearest palette color per pixel; ties go to the lower class.
pub fn oracle_segment(image: &RgbImage, palette: &[[f32; 3]]) -> Result<LabelMap> {
    for i in 0..palette.len() {
        for j in 0..i {
            if palette[i] == palette[j] {
                return Err(Error::Precondition(format!("palette colors {j} and {i} are identical")));
            }
        }
    }
    if palette.is_empty() || palette.len() > 256 {
        return Err(Error::Precondition(format!("palette size {} out of range", palette.len())));
    }
    let mut out = LabelMap::zeros(image.width, image.height);
    for y in 0..image.height {
        for x in 0..image.width {
            let px = image.get(x, y);
            let mut best = (f32::INFINITY, 0);
            for (c, col) in palette.iter().enumerate() {
                let d: f32 = (0..3).map(|k| (px[k] - col[k]).powi(2)).sum();
                if d < best.0 {
                    best = (d, c);
                }
            }
            out.set(x, y, best.1 as u8);
        }
    }
    Ok(out)
}

/// Fixed random conv net embedding images for the distribution metrics:
/// a 4×4 color thumbnail concatenated with 2×2-pooled conv features.
#[derive(Clone, Debug)]
pub struct FidExtractor {
    id: String,
    convs: [Conv2d; 2],
    params: ParamSet<f32>,
}

impl FidExtractor {
    pub fn toy(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let convs = [
            Conv2d::new(&mut params, "fid.c0", 3, 16, 3, 1, true, true, &mut rng),
            Conv2d::new(&mut params, "fid.c1", 16, 32, 3, 1, true, true, &mut rng),
        ];
        Self {
            id: format!("toy-fid/v1/seed={seed}"),
            convs,
            params,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Embeds a `[N,3,H,W]` batch (H, W divisible by 8).
    pub fn embed_batch(&self, x: &Tensor<f32>) -> Vec<Vec<f64>> {
        let g = Graph::new();
        let b = Binder::frozen(&g, &self.params);
        let xv = g.constant(x.clone());
        let n = x.shape()[0];
        let thumb = xv.resize_to(4);
        let h = self.convs[0].forward(&b, &xv).avg_pool(2);
        let h = self.convs[1].forward(&b, &h).resize_to(2);
        let (t, f) = (thumb.value().data(), h.value().data());
        let (tn, fn_) = (t.len() / n, f.len() / n);
        (0..n)
            .map(|i| {
                t[i * tn..(i + 1) * tn]
                    .iter()
                    .chain(&f[i * fn_..(i + 1) * fn_])
                    .map(|&v| v as f64)
                    .collect()
            })
            .collect()
    }

    pub fn embed_images(&self, images: &[RgbImage]) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(64) {
            let (w, h) = (chunk[0].width, chunk[0].height);
            let mut data = Vec::with_capacity(chunk.len() * 3 * w * h);
            for im in chunk {
                data.extend_from_slice(&im.data);
            }
            out.extend(self.embed_batch(&Tensor::from_vec(&[chunk.len(), 3, h, w], data)));
        }
        out
    }
}

pub fn extract_stats(images: &[RgbImage], extractor: &FidExtractor) -> Result<FeatureStats> {
    if images.len() < 2 {
        return Err(Error::Precondition(format!("need at least 2 images, got {}", images.len())));
    }
    FeatureStats::from_features(&extractor.embed_images(images))
}
