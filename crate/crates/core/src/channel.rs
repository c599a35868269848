//! MIMO channel models.
//!
//! A flat channel is a single `K x L` complex gain matrix; a
//! frequency-selective channel is `J` such matrices, one per tap, with taps
//! spaced `delta T` apart.
//!
//! Sign convention: the per-frequency channel matrix is stored as the
//! function of `f_n` given by `H_{kl}(-f_n) = sum_i h^i_{kl} e^{+j 2 pi f_n i}`.
//! Capacity depends only on the eigenvalues of `Z(f) = H^H H` integrated
//! over a full period, which is invariant under `f -> -f`.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{FtnError, Result};
use crate::grid::FrequencyGrid;
use crate::linalg::{self, C64};

/// Per-realization random stream: the master seed picks the key, the
/// realization index picks the ChaCha stream, so results never depend on
/// the order realizations are evaluated in.
pub fn substream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn complex_gaussian(rng: &mut ChaCha8Rng, variance: f64) -> C64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(s * re, s * im)
}

/// Frequency-flat `K x L` channel.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatChannel {
    h: Array2<C64>,
}

impl FlatChannel {
    pub fn new(h: Array2<C64>) -> Result<Self> {
        if h.nrows() == 0 || h.ncols() == 0 {
            return Err(FtnError::DimensionMismatch("channel needs K, L >= 1".into()));
        }
        if h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(FtnError::InvalidConfig("channel entries must be finite".into()));
        }
        Ok(Self { h })
    }

    pub fn k(&self) -> usize {
        self.h.nrows()
    }

    pub fn l(&self) -> usize {
        self.h.ncols()
    }

    pub fn matrix(&self) -> &Array2<C64> {
        &self.h
    }
}

/// Tapped-delay-line `K x L` channel with `J` taps.
#[derive(Clone, Debug, PartialEq)]
pub struct FsChannel {
    taps: Vec<Array2<C64>>,
}

impl FsChannel {
    pub fn new(taps: Vec<Array2<C64>>) -> Result<Self> {
        let first = taps
            .first()
            .ok_or_else(|| FtnError::DimensionMismatch("channel needs J >= 1 taps".into()))?;
        let dim = first.dim();
        if dim.0 == 0 || dim.1 == 0 {
            return Err(FtnError::DimensionMismatch("channel needs K, L >= 1".into()));
        }
        if let Some((j, t)) = taps.iter().enumerate().find(|(_, t)| t.dim() != dim) {
            return Err(FtnError::DimensionMismatch(format!(
                "tap {j} is {:?}, expected {dim:?}",
                t.dim()
            )));
        }
        if taps.iter().flat_map(|t| t.iter()).any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(FtnError::InvalidConfig("channel entries must be finite".into()));
        }
        Ok(Self { taps })
    }

    pub fn k(&self) -> usize {
        self.taps[0].nrows()
    }

    pub fn l(&self) -> usize {
        self.taps[0].ncols()
    }

    pub fn j(&self) -> usize {
        self.taps.len()
    }

    pub fn taps(&self) -> &[Array2<C64>] {
        &self.taps
    }

    pub fn tap(&self, j: usize) -> &Array2<C64> {
        &self.taps[j]
    }

    /// Single-tap channels reduce to flat fading.
    pub fn as_flat(&self) -> Option<FlatChannel> {
        (self.j() == 1).then(|| FlatChannel { h: self.taps[0].clone() })
    }

    /// `H(-f_n)`: entry `(k, l)` is `sum_i h^i_{kl} e^{+j 2 pi f_n i}`.
    pub fn link_spectrum(&self, f_n: f64) -> Array2<C64> {
        let mut out = Array2::zeros((self.k(), self.l()));
        for (i, tap) in self.taps.iter().enumerate() {
            let w = C64::from_polar(1.0, 2.0 * PI * f_n * i as f64);
            out.scaled_add(w, tap);
        }
        out
    }

    pub fn spectrum_matrix(&self, grid: &FrequencyGrid) -> Result<ChannelSpectrum> {
        let points = grid
            .points()
            .iter()
            .map(|&f| {
                let h = self.link_spectrum(f);
                let z = linalg::adjoint(h.view()).dot(&h);
                let eig = linalg::eigh(&z)?;
                Ok(SpectrumPoint {
                    f,
                    modes: eig.values.mapv(|x| x.max(0.0)),
                    basis: eig.vectors,
                    h,
                    z,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ChannelSpectrum { points })
    }

    /// Total tap energy `sum_i |h^i_{kl}|^2` of one link.
    pub fn link_energy(&self, k: usize, l: usize) -> f64 {
        self.taps.iter().map(|t| t[[k, l]].norm_sqr()).sum()
    }
}

impl From<FlatChannel> for FsChannel {
    fn from(ch: FlatChannel) -> Self {
        Self { taps: vec![ch.h] }
    }
}

impl From<&FlatChannel> for FsChannel {
    fn from(ch: &FlatChannel) -> Self {
        Self { taps: vec![ch.h.clone()] }
    }
}

/// i.i.d. CN(0,1) flat channel.
pub fn gen_flat(k: usize, l: usize, seed: u64) -> FlatChannel {
    gen_flat_indexed(k, l, seed, 0)
}

/// Flat channel drawn from substream `index` of `seed`.
pub fn gen_flat_indexed(k: usize, l: usize, seed: u64, index: u64) -> FlatChannel {
    assert!(k >= 1 && l >= 1, "channel needs K, L >= 1");
    let mut rng = substream(seed, index);
    FlatChannel {
        h: Array2::from_shape_simple_fn((k, l), || complex_gaussian(&mut rng, 1.0)),
    }
}

/// i.i.d. CN(0, 1/(L J)) taps.
pub fn gen_fs(k: usize, l: usize, j: usize, seed: u64) -> FsChannel {
    gen_fs_indexed(k, l, j, seed, 0)
}

pub fn gen_fs_indexed(k: usize, l: usize, j: usize, seed: u64, index: u64) -> FsChannel {
    gen_taps(k, l, j, 1.0 / (l * j) as f64, seed, index)
}

/// i.i.d. CN(0, variance) taps from substream `index` of `seed`.
pub fn gen_taps(k: usize, l: usize, j: usize, variance: f64, seed: u64, index: u64) -> FsChannel {
    assert!(k >= 1 && l >= 1 && j >= 1, "channel needs K, L, J >= 1");
    let mut rng = substream(seed, index);
    let taps = (0..j)
        .map(|_| Array2::from_shape_simple_fn((k, l), || complex_gaussian(&mut rng, variance)))
        .collect();
    FsChannel { taps }
}

/// `Z = H^H H = V_Z diag(tau) V_Z^H` with `tau` descending.
#[derive(Clone, Debug)]
pub struct ChannelGramian {
    pub z: Array2<C64>,
    pub tau: Array1<f64>,
    pub v: Array2<C64>,
}

pub fn channel_gramian(ch: &FlatChannel) -> Result<ChannelGramian> {
    let z = linalg::adjoint(ch.h.view()).dot(&ch.h);
    let eig = linalg::eigh(&z)?;
    Ok(ChannelGramian {
        z,
        tau: eig.values.mapv(|x| x.max(0.0)),
        v: eig.vectors,
    })
}

/// Channel matrix, Gramian and eigenmodes at one grid frequency.
#[derive(Clone, Debug)]
pub struct SpectrumPoint {
    pub f: f64,
    pub h: Array2<C64>,
    pub z: Array2<C64>,
    /// Eigenmodes `tau_i(f)`, sorted descending per point (no branch tracking).
    pub modes: Array1<f64>,
    pub basis: Array2<C64>,
}

#[derive(Clone, Debug)]
pub struct ChannelSpectrum {
    pub points: Vec<SpectrumPoint>,
}

impl ChannelSpectrum {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn modes(&self) -> Vec<Vec<f64>> {
        self.points.iter().map(|p| p.modes.to_vec()).collect()
    }
}

const FORMAT_TAG: &str = "ftn-channel";
const FORMAT_VERSION: &str = "v1";

/// Serializes a channel as line-oriented text.
///
/// ```text
/// ftn-channel v1; K=2; L=2; J=1
/// # tap 0
/// 0.1,-0.3 1.2,0.5
/// -0.7,0.2 0.05,0
/// ```
///
/// Floats are written in shortest round-trip form, so loading restores
/// the taps bit for bit.
pub fn format_channel(ch: &FsChannel) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{FORMAT_TAG} {FORMAT_VERSION}; K={}; L={}; J={}",
        ch.k(),
        ch.l(),
        ch.j()
    );
    for (j, tap) in ch.taps.iter().enumerate() {
        let _ = writeln!(out, "# tap {j}");
        for row in tap.rows() {
            let line: Vec<String> = row.iter().map(|z| format!("{:?},{:?}", z.re, z.im)).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
    }
    out
}

pub fn save_channel(path: impl AsRef<Path>, ch: &FsChannel) -> Result<()> {
    std::fs::write(path, format_channel(ch))?;
    Ok(())
}

pub fn load_channel(path: impl AsRef<Path>) -> Result<FsChannel> {
    parse_channel(&std::fs::read_to_string(path)?)
}

fn parse_err(line: usize, message: impl Into<String>) -> FtnError {
    FtnError::Parse {
        line,
        message: message.into(),
    }
}

fn parse_header(line: &str) -> Result<(usize, usize, usize)> {
    let mut parts = line.split(';').map(str::trim);
    let tag = parts.next().unwrap_or_default();
    let mut words = tag.split_whitespace();
    if words.next() != Some(FORMAT_TAG) {
        return Err(parse_err(1, format!("expected `{FORMAT_TAG}` header")));
    }
    match words.next() {
        Some(FORMAT_VERSION) => {}
        Some(v) => return Err(parse_err(1, format!("unsupported version `{v}`"))),
        None => return Err(parse_err(1, "missing version")),
    }
    let (mut k, mut l, mut j) = (None, None, None);
    for part in parts.filter(|p| !p.is_empty()) {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| parse_err(1, format!("malformed header field `{part}`")))?;
        let value: usize = value
            .trim()
            .parse()
            .map_err(|_| parse_err(1, format!("bad value in `{part}`")))?;
        match key.trim() {
            "K" => k = Some(value),
            "L" => l = Some(value),
            "J" => j = Some(value),
            other => return Err(parse_err(1, format!("unknown header key `{other}`"))),
        }
    }
    match (k, l, j) {
        (Some(k), Some(l), Some(j)) if k > 0 && l > 0 && j > 0 => Ok((k, l, j)),
        (Some(_), Some(_), Some(_)) => Err(FtnError::DimensionMismatch(
            "header dimensions must be positive".into(),
        )),
        _ => Err(parse_err(1, "header must define K, L and J")),
    }
}

fn parse_entry(token: &str, line: usize) -> Result<C64> {
    let (re, im) = token
        .split_once(',')
        .ok_or_else(|| parse_err(line, format!("expected `re,im`, got `{token}`")))?;
    let re: f64 = re
        .parse()
        .map_err(|_| parse_err(line, format!("bad real part `{re}`")))?;
    let im: f64 = im
        .parse()
        .map_err(|_| parse_err(line, format!("bad imaginary part `{im}`")))?;
    Ok(C64::new(re, im))
}

pub fn parse_channel(text: &str) -> Result<FsChannel> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty channel file"))?;
    let (k, l, j) = parse_header(header)?;

    let rows: Vec<(usize, &str)> = lines
        .map(|(i, s)| (i + 1, s.trim()))
        .filter(|(_, s)| !s.is_empty() && !s.starts_with('#'))
        .collect();
    let mut entries: Vec<C64> = Vec::with_capacity(rows.len() * l);
    for (idx, &(line_no, row)) in rows.iter().enumerate() {
        let parsed = row
            .split_whitespace()
            .map(|tok| parse_entry(tok, line_no))
            .collect::<Result<Vec<_>>>()?;
        if parsed.len() != l {
            if idx + 1 == rows.len() && parsed.len() < l {
                return Err(parse_err(line_no, "truncated row"));
            }
            return Err(FtnError::DimensionMismatch(format!(
                "line {line_no} has {} entries, header says L={l}",
                parsed.len()
            )));
        }
        entries.extend(parsed);
    }
    if rows.len() % k != 0 {
        let line_no = rows.last().map(|r| r.0).unwrap_or(1);
        return Err(parse_err(line_no, "truncated tap block"));
    }
    let blocks = rows.len() / k;
    if blocks != j {
        return Err(FtnError::DimensionMismatch(format!(
            "header says J={j} but {blocks} tap blocks present"
        )));
    }
    let taps = entries
        .chunks(k * l)
        .map(|c| Array2::from_shape_vec((k, l), c.to_vec()).expect("chunk size is K*L"))
        .collect();
    FsChannel::new(taps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn generation_is_deterministic_per_seed_and_index() {
        assert_eq!(gen_flat(3, 2, 42), gen_flat(3, 2, 42));
        assert_ne!(gen_flat(3, 2, 42), gen_flat(3, 2, 43));
        assert_ne!(gen_flat_indexed(3, 2, 42, 1), gen_flat_indexed(3, 2, 42, 2));
        assert_eq!(gen_fs(2, 2, 5, 7), gen_fs(2, 2, 5, 7));
    }

    #[test]
    fn flat_entries_have_unit_variance_and_zero_mean() {
        let ch = gen_flat(1000, 1000, 2024);
        let n = 1e6;
        let var: f64 = ch.matrix().iter().map(|z| z.norm_sqr()).sum::<f64>() / n;
        assert!((0.99..=1.01).contains(&var), "{var}");
        let mean: C64 = ch.matrix().iter().sum::<C64>() / n;
        assert!(mean.norm() < 0.005, "{mean}");
    }

    #[test]
    fn fs_tap_variance_is_one_over_lj() {
        let draws: Vec<FsChannel> = (0..1250).map(|i| gen_fs_indexed(2, 2, 20, 9, i)).collect();
        let samples: Vec<f64> = draws
            .iter()
            .flat_map(|ch| ch.taps().iter().flat_map(|t| t.iter().map(|z| z.norm_sqr())))
            .collect();
        assert_eq!(samples.len(), 100_000);
        let var = samples.iter().sum::<f64>() / samples.len() as f64;
        assert!((var - 1.0 / 40.0).abs() < 0.05 / 40.0, "{var}");
        let single = gen_fs(1, 1, 1, 3);
        assert_eq!(single.j(), 1);
    }

    #[test]
    fn gramian_examples() {
        let id = FlatChannel::new(Array2::eye(2).mapv(|x: f64| c(x, 0.0))).unwrap();
        let g = channel_gramian(&id).unwrap();
        assert_eq!(g.tau.to_vec(), vec![1.0, 1.0]);
        let d = FlatChannel::new(array![[c(2.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(1.0, 0.0)]]).unwrap();
        let g = channel_gramian(&d).unwrap();
        assert!((g.tau[0] - 4.0).abs() < 1e-14 && (g.tau[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn gramian_trace_and_reconstruction() {
        let ch = gen_flat(3, 3, 11);
        let g = channel_gramian(&ch).unwrap();
        let frob2: f64 = ch.matrix().iter().map(|z| z.norm_sqr()).sum();
        assert!((g.tau.sum() - frob2).abs() < 1e-12 * frob2);
        let back = linalg::reconstruct(g.v.view(), g.tau.as_slice().unwrap());
        assert!(linalg::frobenius((&back - &g.z).view()) < 1e-10 * linalg::frobenius(g.z.view()));
        assert!(g.tau.iter().all(|&t| t >= 0.0));
    }

    #[test]
    fn single_tap_spectrum_is_constant() {
        let flat = gen_flat(2, 2, 5);
        let fs = FsChannel::from(&flat);
        let grid = FrequencyGrid::midpoint(16).unwrap();
        let spec = fs.spectrum_matrix(&grid).unwrap();
        let g = channel_gramian(&flat).unwrap();
        for p in &spec.points {
            assert_eq!(p.h, *flat.matrix());
            for (a, b) in p.modes.iter().zip(g.tau.iter()) {
                assert!((a - b).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn two_tap_link_spectrum() {
        let ch = FsChannel::new(vec![array![[c(1.0, 0.0)]], array![[c(-1.0, 0.0)]]]).unwrap();
        for &f in &[-0.5, -0.2, 0.0, 0.1, 0.37, 0.5] {
            let h = ch.link_spectrum(f)[[0, 0]];
            let expect = 2.0 - 2.0 * (2.0 * PI * f).cos();
            assert!((h.norm_sqr() - expect).abs() < 1e-14);
        }
        // tau(0) = 0, tau(+-1/2) = 4
        assert!(ch.link_spectrum(0.0)[[0, 0]].norm_sqr() < 1e-30);
        assert!((ch.link_spectrum(0.5)[[0, 0]].norm_sqr() - 4.0).abs() < 1e-14);
        assert!((ch.link_spectrum(-0.5)[[0, 0]].norm_sqr() - 4.0).abs() < 1e-14);
    }

    #[test]
    fn link_spectrum_parseval() {
        let ch = gen_fs(2, 3, 7, 99);
        let grid = FrequencyGrid::midpoint(2048).unwrap();
        for k in 0..2 {
            for l in 0..3 {
                let integral =
                    grid.integrate(grid.points().iter().map(|&f| ch.link_spectrum(f)[[k, l]].norm_sqr()));
                let energy = ch.link_energy(k, l);
                assert!((integral - energy).abs() < 1e-6 * energy);
            }
        }
    }

    #[test]
    fn spectrum_modes_sorted_and_trace_identity() {
        let ch = gen_fs(2, 2, 5, 1);
        let spec = ch.spectrum_matrix(&FrequencyGrid::midpoint(64).unwrap()).unwrap();
        for p in &spec.points {
            assert!(p.modes[0] >= p.modes[1] && p.modes[1] >= 0.0);
            let frob2: f64 = p.h.iter().map(|z| z.norm_sqr()).sum();
            assert!((p.modes.sum() - frob2).abs() < 1e-12 * frob2.max(1.0));
            let herm = linalg::frobenius((&p.z - &linalg::adjoint(p.z.view())).view());
            assert!(herm < 1e-14);
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ch = gen_fs(3, 2, 4, 17);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ch.txt");
        save_channel(&path, &ch).unwrap();
        let back = load_channel(&path).unwrap();
        assert_eq!(back, ch);
        for (a, b) in back.taps().iter().zip(ch.taps()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(x.re.to_bits(), y.re.to_bits());
                assert_eq!(x.im.to_bits(), y.im.to_bits());
            }
        }
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let text = format_channel(&gen_fs(2, 2, 2, 3));
        let cut = text.rfind(',').unwrap() + 1;
        assert!(matches!(parse_channel(&text[..cut]), Err(FtnError::Parse { .. })));
        let last_row_start = text.trim_end().rfind('\n').unwrap();
        let partial = format!("{}\n{}", &text[..last_row_start], "0.5,0.5");
        assert!(matches!(parse_channel(&partial), Err(FtnError::Parse { .. })));
        assert!(matches!(parse_channel(""), Err(FtnError::Parse { .. })));
        assert!(matches!(parse_channel("not a channel"), Err(FtnError::Parse { .. })));
    }

    #[test]
    fn missing_tap_block_is_a_dimension_mismatch() {
        let text = format_channel(&gen_fs(2, 2, 2, 3));
        let lied = text.replacen("J=2", "J=3", 1);
        assert!(matches!(parse_channel(&lied), Err(FtnError::DimensionMismatch(_))));
    }

    #[test]
    fn unknown_version_rejected() {
        let text = format_channel(&gen_fs(1, 1, 1, 3)).replacen("v1", "v9", 1);
        assert!(matches!(parse_channel(&text), Err(FtnError::Parse { .. })));
    }

    proptest! {
        #[test]
        fn format_parse_round_trip(k in 1usize..4, l in 1usize..4, j in 1usize..4, seed in any::<u64>()) {
            let ch = gen_fs(k, l, j, seed);
            prop_assert_eq!(parse_channel(&format_channel(&ch)).unwrap(), ch);
        }
    }
}
