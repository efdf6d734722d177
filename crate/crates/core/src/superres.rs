//! Super-resolution forward model `b_i = R S_i x + ε_i`.
//!
//! Images are square, stored row-major (`index = row · n + col`). `S_i` is a
//! bilinear warp (rotation about the image centre followed by a shift, zero
//! outside the domain) and `R` averages `(n/ℓ)²` patches down to an `ℓ × ℓ` frame.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;

use crate::error::{Error, Result};
use crate::linops::{Composed, LinearOperator, Operator, OperatorKind, Stacked};
use crate::problems::{add_noise, NoiseMode};
use crate::rng::labeled_stream;
use crate::sampling::SamplePlan;
use crate::solvers::InverseProblem;

/// Block averaging from `n` to `ℓ` samples per side, in one or two dimensions.
#[derive(Clone, Debug)]
pub struct Restriction {
    n: usize,
    ell: usize,
    two_d: bool,
}

impl Restriction {
    /// Image restriction, `ℓ² × n²`.
    pub fn new(n: usize, ell: usize) -> Result<Self> {
        Self::checked(n, ell, true)
    }

    /// Signal restriction, `ℓ × n`.
    pub fn new_1d(n: usize, ell: usize) -> Result<Self> {
        Self::checked(n, ell, false)
    }

    fn checked(n: usize, ell: usize, two_d: bool) -> Result<Self> {
        if ell == 0 || n == 0 || n % ell != 0 {
            return Err(Error::InvalidArgument(format!(
                "low-resolution size {ell} must divide high-resolution size {n}"
            )));
        }
        Ok(Self { n, ell, two_d })
    }

    pub fn factor(&self) -> usize {
        self.n / self.ell
    }
}

impl LinearOperator for Restriction {
    fn nrows(&self) -> usize {
        if self.two_d {
            self.ell * self.ell
        } else {
            self.ell
        }
    }

    fn ncols(&self) -> usize {
        if self.two_d {
            self.n * self.n
        } else {
            self.n
        }
    }

    fn kind(&self) -> OperatorKind {
        OperatorKind::Restriction
    }

    fn apply_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let f = self.factor();
        if !self.two_d {
            return x.chunks(f).map(|c| c.iter().sum::<f64>() / f as f64).collect();
        }
        let w = 1.0 / (f * f) as f64;
        let mut y = vec![0.0; self.ell * self.ell];
        for r in 0..self.n {
            let row = &x[r * self.n..(r + 1) * self.n];
            let out = &mut y[(r / f) * self.ell..(r / f + 1) * self.ell];
            for (c, v) in row.iter().enumerate() {
                out[c / f] += v;
            }
        }
        y.iter_mut().for_each(|v| *v *= w);
        y
    }

    fn apply_adjoint_unchecked(&self, y: &[f64]) -> Vec<f64> {
        let f = self.factor();
        if !self.two_d {
            return (0..self.n).map(|i| y[i / f] / f as f64).collect();
        }
        let w = 1.0 / (f * f) as f64;
        let mut x = vec![0.0; self.n * self.n];
        for r in 0..self.n {
            for c in 0..self.n {
                x[r * self.n + c] = w * y[(r / f) * self.ell + c / f];
            }
        }
        x
    }
}

/// Rigid motion of one frame, in high-resolution pixels and radians.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Motion {
    /// Shift along columns.
    pub dx: f64,
    /// Shift along rows.
    pub dy: f64,
    pub angle: f64,
}

/// Bilinear warp `(S x)(p) = x(Q⁻¹(p − c − d) + c)` with rotation `Q`, centre
/// `c` and shift `d`. Interpolation weights are precomputed per output pixel.
#[derive(Clone, Debug)]
pub struct AffineWarp {
    n: usize,
    motion: Motion,
    /// Four `(source index, weight)` taps per output pixel; weight 0 marks padding.
    taps: Vec<[(u32, f64); 4]>,
}

impl AffineWarp {
    pub fn new(n: usize, motion: Motion) -> Result<Self> {
        let nf = n as f64;
        if motion.dx.abs() >= nf || motion.dy.abs() >= nf || !motion.dx.is_finite() || !motion.dy.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "shift ({}, {}) must be smaller than the image side {n}",
                motion.dx, motion.dy
            )));
        }
        if !(motion.angle.abs() < std::f64::consts::PI) {
            return Err(Error::InvalidArgument(format!("angle {} must lie in (-π, π)", motion.angle)));
        }
        let c = (nf - 1.0) / 2.0;
        let (sin, cos) = if motion.angle == 0.0 { (0.0, 1.0) } else { motion.angle.sin_cos() };
        let mut taps = Vec::with_capacity(n * n);
        for r in 0..n {
            for col in 0..n {
                let px = col as f64 - c - motion.dx;
                let py = r as f64 - c - motion.dy;
                // inverse rotation
                let sx = cos * px + sin * py + c;
                let sy = -sin * px + cos * py + c;
                let (x0, y0) = (sx.floor(), sy.floor());
                let (fx, fy) = (sx - x0, sy - y0);
                let mut t = [(0u32, 0.0); 4];
                let corners = [
                    (x0, y0, (1.0 - fx) * (1.0 - fy)),
                    (x0 + 1.0, y0, fx * (1.0 - fy)),
                    (x0, y0 + 1.0, (1.0 - fx) * fy),
                    (x0 + 1.0, y0 + 1.0, fx * fy),
                ];
                for (slot, (xx, yy, w)) in t.iter_mut().zip(corners) {
                    if w != 0.0 && xx >= 0.0 && yy >= 0.0 && xx < nf && yy < nf {
                        *slot = ((yy as usize * n + xx as usize) as u32, w);
                    }
                }
                taps.push(t);
            }
        }
        Ok(Self { n, motion, taps })
    }

    pub fn motion(&self) -> Motion {
        self.motion
    }
}

impl LinearOperator for AffineWarp {
    fn nrows(&self) -> usize {
        self.n * self.n
    }

    fn ncols(&self) -> usize {
        self.n * self.n
    }

    fn kind(&self) -> OperatorKind {
        OperatorKind::Affine
    }

    fn apply_unchecked(&self, x: &[f64]) -> Vec<f64> {
        self.taps
            .iter()
            .map(|t| t.iter().map(|&(i, w)| w * x[i as usize]).sum())
            .collect()
    }

    fn apply_adjoint_unchecked(&self, y: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.n * self.n];
        for (t, &v) in self.taps.iter().zip(y) {
            for &(i, w) in t {
                x[i as usize] += w * v;
            }
        }
        x
    }
}

/// `R S_i` for one frame.
pub fn frame_operator(n: usize, ell: usize, motion: Motion) -> Result<Operator> {
    let r: Operator = Arc::new(Restriction::new(n, ell)?);
    let s: Operator = Arc::new(AffineWarp::new(n, motion)?);
    Ok(Arc::new(Composed::new(r, s)?))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub motion: Motion,
    /// `ℓ²` low-resolution pixels.
    pub data: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameSpec {
    pub n: usize,
    pub ell: usize,
    pub frames: usize,
    /// Shifts are uniform in `[−max_shift, max_shift]` high-resolution pixels.
    pub max_shift: f64,
    /// Angles are uniform in `[−max_angle, max_angle]`.
    pub max_angle: f64,
    /// `‖ε_i‖ / ‖R S_i x‖` per frame; 0 for clean frames.
    pub noise_level: f64,
    pub seed: u64,
}

/// Random motions and noisy low-resolution frames of `x_true`.
pub fn gen_frames(x_true: &[f64], spec: &FrameSpec) -> Result<Vec<Frame>> {
    if x_true.len() != spec.n * spec.n {
        return Err(Error::dims("gen_frames: image", spec.n * spec.n, x_true.len()));
    }
    if spec.noise_level < 0.0 || spec.max_shift < 0.0 || spec.max_angle < 0.0 {
        return Err(Error::InvalidArgument("noise level and motion bounds must be >= 0".into()));
    }
    let mut motion_rng = labeled_stream(spec.seed, "motion");
    let mut sym = |bound: f64| if bound > 0.0 { motion_rng.random_range(-bound..=bound) } else { 0.0 };
    let motions: Vec<Motion> = (0..spec.frames)
        .map(|_| Motion {
            dx: sym(spec.max_shift),
            dy: sym(spec.max_shift),
            angle: sym(spec.max_angle),
        })
        .collect();
    motions
        .into_iter()
        .enumerate()
        .map(|(i, motion)| {
            let clean = frame_operator(spec.n, spec.ell, motion)?.apply(x_true)?;
            let data = if spec.noise_level > 0.0 {
                let seed = crate::rng::derive_seed(spec.seed, &format!("frame/{i}"));
                add_noise(&clean, NoiseMode::Level, spec.noise_level, seed)?.0
            } else {
                clean
            };
            Ok(Frame { motion, data })
        })
        .collect()
}

/// The stacked system over all frames with `L = I`, and the plan whose blocks
/// are the frames.
pub fn stacked_problem(n: usize, ell: usize, frames: &[Frame]) -> Result<(InverseProblem, SamplePlan)> {
    if frames.is_empty() {
        return Err(Error::InvalidArgument("no frames".into()));
    }
    let mut parts = Vec::with_capacity(frames.len());
    let mut b = Vec::with_capacity(frames.len() * ell * ell);
    for f in frames {
        if f.data.len() != ell * ell {
            return Err(Error::dims("stacked_problem: frame", ell * ell, f.data.len()));
        }
        parts.push(frame_operator(n, ell, f.motion)?);
        b.extend_from_slice(&f.data);
    }
    let a: Operator = Arc::new(Stacked::new(parts)?);
    let plan = SamplePlan::contiguous(a.nrows(), frames.len())?;
    Ok((InverseProblem::standard(a, b)?, plan))
}

/// A smooth synthetic test scene on `[0, 1]` (discs and a ramp).
pub fn synthetic_image(n: usize) -> Vec<f64> {
    let mut img = vec![0.0; n * n];
    let nf = n as f64;
    for r in 0..n {
        for c in 0..n {
            let (x, y) = ((c as f64 + 0.5) / nf, (r as f64 + 0.5) / nf);
            let mut v = 0.15 + 0.25 * x;
            let blob = |cx: f64, cy: f64, s: f64| (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * s * s)).exp();
            v += 0.6 * blob(0.35, 0.4, 0.12) + 0.4 * blob(0.7, 0.65, 0.08);
            if (0.55..0.85).contains(&x) && (0.15..0.35).contains(&y) {
                v += 0.3;
            }
            img[r * n + c] = v.min(1.0);
        }
    }
    img
}

#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    /// Row-major intensities scaled to `[0, 1]`.
    pub data: Vec<f64>,
}

fn pgm_token(reader: &mut impl BufRead) -> Result<String> {
    let mut tok = String::new();
    let mut byte = [0u8; 1];
    loop {
        if reader.read(&mut byte)? == 0 {
            break;
        }
        let ch = byte[0] as char;
        if ch == '#' && tok.is_empty() {
            let mut skip = String::new();
            reader.read_line(&mut skip)?;
            continue;
        }
        if ch.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            break;
        }
        tok.push(ch);
    }
    if tok.is_empty() {
        return Err(Error::Parse("unexpected end of PGM header".into()));
    }
    Ok(tok)
}

fn pgm_number(reader: &mut impl BufRead, what: &str) -> Result<usize> {
    let tok = pgm_token(reader)?;
    tok.parse().map_err(|_| Error::Parse(format!("bad PGM {what} {tok:?}")))
}

/// Reads an ASCII (P2) or binary (P5) graymap.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let mut reader = BufReader::new(fs::File::open(path)?);
    let magic = pgm_token(&mut reader)?;
    let binary = match magic.as_str() {
        "P2" => false,
        "P5" => true,
        other => return Err(Error::Parse(format!("{}: not a PGM file (magic {other:?})", path.display()))),
    };
    let width = pgm_number(&mut reader, "width")?;
    let height = pgm_number(&mut reader, "height")?;
    let maxval = pgm_number(&mut reader, "maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Parse(format!("PGM maxval {maxval} out of range")));
    }
    let count = width * height;
    let scale = 1.0 / maxval as f64;
    let data = if binary {
        let wide = maxval > 255;
        let mut raw = vec![0u8; count * if wide { 2 } else { 1 }];
        reader
            .read_exact(&mut raw)
            .map_err(|_| Error::Parse("PGM pixel data truncated".into()))?;
        if wide {
            raw.chunks(2).map(|p| u16::from_be_bytes([p[0], p[1]]) as f64 * scale).collect()
        } else {
            raw.iter().map(|&p| p as f64 * scale).collect()
        }
    } else {
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            data.push(pgm_number(&mut reader, "pixel")? as f64 * scale);
        }
        data
    };
    Ok(GrayImage { width, height, data })
}

/// Writes an 8-bit graymap; values are clamped to `[0, 1]`.
pub fn write_pgm(path: impl AsRef<Path>, img: &GrayImage, binary: bool) -> Result<()> {
    if img.data.len() != img.width * img.height {
        return Err(Error::dims("write_pgm", img.width * img.height, img.data.len()));
    }
    let quant = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    if binary {
        write!(out, "P5\n{} {}\n255\n", img.width, img.height)?;
        out.write_all(&img.data.iter().map(|&v| quant(v)).collect::<Vec<u8>>())?;
    } else {
        writeln!(out, "P2\n{} {}\n255", img.width, img.height)?;
        for row in img.data.chunks(img.width.max(1)) {
            let line: Vec<String> = row.iter().map(|&v| quant(v).to_string()).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Writes `frame_NNNN.pgm` and its `frame_NNNN.txt` motion sidecar (`dx dy angle`).
/// `index` is one-based.
pub fn write_frame(dir: impl AsRef<Path>, index: usize, ell: usize, frame: &Frame) -> Result<()> {
    let dir = dir.as_ref();
    let img = GrayImage {
        width: ell,
        height: ell,
        data: frame.data.clone(),
    };
    // the image goes last so a watcher never sees it without its metadata
    fs::write(
        dir.join(format!("frame_{index:04}.txt")),
        format!("{} {} {}\n", frame.motion.dx, frame.motion.dy, frame.motion.angle),
    )?;
    let tmp = dir.join(format!(".frame_{index:04}.pgm.tmp"));
    write_pgm(&tmp, &img, true)?;
    fs::rename(tmp, dir.join(format!("frame_{index:04}.pgm")))?;
    Ok(())
}

/// Frames read from a directory in index order as they appear.
#[derive(Debug)]
pub struct FrameStream {
    dir: PathBuf,
    next: usize,
    timeout: Duration,
    poll: Duration,
}

impl FrameStream {
    /// Waits at most `timeout` for each frame.
    pub fn open(dir: impl Into<PathBuf>, timeout: Duration) -> Result<Self> {
        let dir = dir.into();
        if !dir.is_dir() {
            return Err(Error::InvalidArgument(format!("{} is not a directory", dir.display())));
        }
        Ok(Self {
            dir,
            next: 1,
            timeout,
            poll: Duration::from_millis(20),
        })
    }

    /// One-based index of the frame `next_frame` will return.
    pub fn position(&self) -> usize {
        self.next
    }

    /// The next frame, or `None` once no frame arrives within the timeout.
    pub fn next_frame(&mut self) -> Result<Option<(Frame, usize)>> {
        let img_path = self.dir.join(format!("frame_{:04}.pgm", self.next));
        let meta_path = self.dir.join(format!("frame_{:04}.txt", self.next));
        let start = Instant::now();
        while !(img_path.exists() && meta_path.exists()) {
            if start.elapsed() >= self.timeout {
                return Ok(None);
            }
            std::thread::sleep(self.poll);
        }
        let img = read_pgm(&img_path)?;
        if img.width != img.height {
            return Err(Error::InvalidArgument(format!("{}: frames must be square", img_path.display())));
        }
        let meta = fs::read_to_string(&meta_path)?;
        let vals: Vec<f64> = meta
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::Parse(format!("{}: bad value {t:?}", meta_path.display()))))
            .collect::<Result<_>>()?;
        let [dx, dy, angle] = vals[..] else {
            return Err(Error::Parse(format!("{}: expected `dx dy angle`", meta_path.display())));
        };
        self.next += 1;
        Ok(Some((
            Frame {
                motion: Motion { dx, dy, angle },
                data: img.data,
            },
            img.width,
        )))
    }
}

impl Iterator for FrameStream {
    type Item = Result<(Frame, usize)>;
    fn next(&mut self) -> Option<Self::Item> {
        self.next_frame().transpose()
    }
}
