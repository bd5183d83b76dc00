//! Ricean MIMO channel generation for the direct, transmitter-to-surface and
//! surface-to-receiver links.
//!
//! Every link matrix is
//!
//! ```text
//! H = √g · ( √(κ/(κ+1)) · H_los + √(1/(κ+1)) · H_nlos )
//! ```
//!
//! where `g` is the pathloss gain at the link's centre-to-centre distance,
//! `H_los` is the far-field outer product of the two arrays' response vectors
//! and `H_nlos` has iid CN(0, 1) entries.

mod io;

pub use io::{load_channel_set, save_channel_set, CHSET_MAGIC, CHSET_VERSION};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{complex_normal, CMatrix, C64};
use crate::units::db_to_linear;

pub type Point = [f64; 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn unit(self) -> Point {
        match self {
            Axis::X => [1.0, 0.0, 0.0],
            Axis::Y => [0.0, 1.0, 0.0],
            Axis::Z => [0.0, 0.0, 1.0],
        }
    }
}

/// Axis-aligned plane holding the metasurface elements.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plane {
    Xy,
    Xz,
    Yz,
}

impl Plane {
    /// In-plane (column, row) directions and the normal.
    fn frame(self) -> (Point, Point, Point) {
        match self {
            Plane::Xy => ([1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]),
            Plane::Xz => ([1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]),
            Plane::Yz => ([0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]),
        }
    }

    pub fn normal(self) -> Point {
        self.frame().2
    }
}

/// Node placement and array sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeGeometry {
    pub tx_pos: Point,
    pub rx_pos: Point,
    /// Centre of the surface the transmitter illuminates (first layer for a SIM).
    pub ms_pos: Point,
    pub tx_antennas: usize,
    pub rx_antennas: usize,
    /// Axis of the half-wavelength uniform linear arrays at both ends.
    pub array_axis: Axis,
    pub ms_plane: Plane,
    pub ms_rows: usize,
    pub ms_cols: usize,
    /// Element pitch in metres.
    pub ms_pitch: f64,
    /// Offset of the exit face along the plane normal (zero for an RIS,
    /// `(M-1)·d_M` for an `M`-layer SIM).
    pub ms_depth: f64,
}

impl NodeGeometry {
    /// The evaluation scenario: surface at the origin, TX at (-2, 2, -0.5),
    /// RX at (10, 16, 4), 32 receive antennas.
    pub fn standard(tx_antennas: usize, ms_plane: Plane, side: usize, pitch: f64, depth: f64) -> Self {
        NodeGeometry {
            tx_pos: [-2.0, 2.0, -0.5],
            rx_pos: [10.0, 16.0, 4.0],
            ms_pos: [0.0, 0.0, 0.0],
            tx_antennas,
            rx_antennas: 32,
            array_axis: Axis::Z,
            ms_plane,
            ms_rows: side,
            ms_cols: side,
            ms_pitch: pitch,
            ms_depth: depth,
        }
    }

    pub fn n_elements(&self) -> usize {
        self.ms_rows * self.ms_cols
    }

    pub fn ms_exit_pos(&self) -> Point {
        add(self.ms_pos, scale(self.ms_plane.normal(), self.ms_depth))
    }

    pub fn validate(&self) -> Result<()> {
        if self.tx_antennas == 0 || self.rx_antennas == 0 {
            return Err(Error::Domain("antenna counts must be positive".into()));
        }
        if self.ms_rows == 0 || self.ms_cols == 0 {
            return Err(Error::Domain("metasurface grid must be non-empty".into()));
        }
        if !(self.ms_pitch > 0.0) || !(self.ms_depth >= 0.0) {
            return Err(Error::Domain("metasurface pitch must be positive and depth non-negative".into()));
        }
        let pts = [self.tx_pos, self.rx_pos, self.ms_pos, self.ms_exit_pos()];
        for (a, b) in [(0, 1), (0, 2), (1, 3)] {
            if distance(pts[a], pts[b]) <= 0.0 {
                return Err(Error::Geometry("node positions must be distinct".into()));
            }
        }
        Ok(())
    }

    pub fn direct_distance(&self) -> f64 {
        distance(self.tx_pos, self.rx_pos)
    }

    pub fn tx_ms_distance(&self) -> f64 {
        distance(self.tx_pos, self.ms_pos)
    }

    pub fn ms_rx_distance(&self) -> f64 {
        distance(self.ms_exit_pos(), self.rx_pos)
    }

    fn ula_offsets(&self, n: usize, wavelength: f64) -> Vec<Point> {
        let axis = self.array_axis.unit();
        (0..n)
            .map(|i| scale(axis, (i as f64 - (n as f64 - 1.0) / 2.0) * wavelength / 2.0))
            .collect()
    }

    /// Element centre offsets, row-major over the grid.
    pub fn ms_offsets(&self) -> Vec<Point> {
        grid_offsets(self.ms_plane, self.ms_rows, self.ms_cols, self.ms_pitch)
    }
}

/// Centred grid offsets in `plane`, row-major.
pub fn grid_offsets(plane: Plane, rows: usize, cols: usize, pitch: f64) -> Vec<Point> {
    let (cu, ru, _) = plane.frame();
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let dc = (c as f64 - (cols as f64 - 1.0) / 2.0) * pitch;
            let dr = (r as f64 - (rows as f64 - 1.0) / 2.0) * pitch;
            out.push(add(scale(cu, dc), scale(ru, dr)));
        }
    }
    out
}

/// Carrier wavelength, Ricean factors and the log-distance pathloss model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FadingParams {
    pub wavelength: f64,
    /// Ricean factor of the TX–RX link, dB.
    pub kappa_direct_db: f64,
    /// Ricean factor of the TX–surface link, dB.
    pub kappa_tx_ms_db: f64,
    /// Ricean factor of the surface–RX link, dB.
    pub kappa_ms_rx_db: f64,
    pub pathloss_exponent: f64,
    /// Loss at 1 m, dB.
    pub reference_loss_db: f64,
}

impl FadingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.wavelength > 0.0) {
            return Err(Error::Domain("wavelength must be positive".into()));
        }
        if !(self.pathloss_exponent >= 1.0) {
            return Err(Error::Domain("pathloss exponent must be at least 1".into()));
        }
        Ok(())
    }

    /// Free-space loss at 1 m with exponent 2: `20·log10(4π/λ)`.
    pub fn free_space(wavelength: f64, kappas_db: [f64; 3]) -> Self {
        FadingParams {
            wavelength,
            kappa_direct_db: kappas_db[0],
            kappa_tx_ms_db: kappas_db[1],
            kappa_ms_rx_db: kappas_db[2],
            pathloss_exponent: 2.0,
            reference_loss_db: 20.0 * (4.0 * std::f64::consts::PI / wavelength).log10(),
        }
    }

    /// Chooses reference loss and exponent so that the direct link loses
    /// `direct_db` and the two surface links together lose `cascaded_db`.
    pub fn calibrated(
        geom: &NodeGeometry,
        wavelength: f64,
        kappas_db: [f64; 3],
        direct_db: f64,
        cascaded_db: f64,
    ) -> Result<Self> {
        let ld = geom.direct_distance().log10();
        let l1 = geom.tx_ms_distance().log10();
        let l2 = geom.ms_rx_distance().log10();
        // ref + a·ld = direct ; 2·ref + a·(l1 + l2) = cascaded ; a = 10·exponent
        let det = (l1 + l2) - 2.0 * ld;
        if det.abs() < 1e-12 {
            return Err(Error::Geometry("pathloss calibration is singular for this geometry".into()));
        }
        let a = (cascaded_db - 2.0 * direct_db) / det;
        let reference = direct_db - a * ld;
        let params = FadingParams {
            wavelength,
            kappa_direct_db: kappas_db[0],
            kappa_tx_ms_db: kappas_db[1],
            kappa_ms_rx_db: kappas_db[2],
            pathloss_exponent: a / 10.0,
            reference_loss_db: reference,
        };
        params.validate()?;
        Ok(params)
    }
}

/// Log-distance pathloss `reference + 10·exponent·log10(d)`, in dB.
pub fn pathloss_db(distance: f64, params: &FadingParams) -> Result<f64> {
    if !(distance > 0.0) {
        return Err(Error::Domain(format!("distance must be positive, got {distance}")));
    }
    Ok(params.reference_loss_db + 10.0 * params.pathloss_exponent * distance.log10())
}

/// One coherence frame of CSI: `H_D` (N_r×N_t), `H_1` (N_t×N_m), `H_2` (N_r×N_m).
///
/// `H_1` enters the received signal as `H_1ᴴ`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelRealization {
    pub h_d: CMatrix,
    pub h_1: CMatrix,
    pub h_2: CMatrix,
    pub frame: u64,
}

impl ChannelRealization {
    pub fn new(h_d: CMatrix, h_1: CMatrix, h_2: CMatrix, frame: u64) -> Result<Self> {
        let h = ChannelRealization { h_d, h_1, h_2, frame };
        h.validate()?;
        Ok(h)
    }

    pub fn n_r(&self) -> usize {
        self.h_d.rows()
    }

    pub fn n_t(&self) -> usize {
        self.h_d.cols()
    }

    pub fn n_m(&self) -> usize {
        self.h_1.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let (nr, nt) = self.h_d.shape();
        let nm = self.h_1.cols();
        if self.h_1.rows() != nt || self.h_2.shape() != (nr, nm) {
            return Err(Error::dim(format!(
                "channel shapes H_D {:?}, H_1 {:?}, H_2 {:?}",
                self.h_d.shape(),
                self.h_1.shape(),
                self.h_2.shape()
            )));
        }
        Ok(())
    }

    /// All three links with iid CN(0, 1) entries.
    pub fn random_unit<R: rand::Rng + ?Sized>(n_r: usize, n_t: usize, n_m: usize, rng: &mut R) -> Self {
        ChannelRealization {
            h_d: CMatrix::random(n_r, n_t, rng),
            h_1: CMatrix::random(n_t, n_m, rng),
            h_2: CMatrix::random(n_r, n_m, rng),
            frame: 0,
        }
    }
}

struct LinkModel {
    gain_sqrt: f64,
    los_weight: f64,
    nlos_weight: f64,
    los: CMatrix,
}

impl LinkModel {
    fn new(los: CMatrix, distance: f64, kappa_db: f64, params: &FadingParams) -> Result<Self> {
        let gain = db_to_linear(-pathloss_db(distance, params)?);
        let kappa = db_to_linear(kappa_db);
        let (los_weight, nlos_weight) = if kappa.is_infinite() {
            (1.0, 0.0)
        } else {
            ((kappa / (kappa + 1.0)).sqrt(), (1.0 / (kappa + 1.0)).sqrt())
        };
        Ok(LinkModel {
            gain_sqrt: gain.sqrt(),
            los_weight,
            nlos_weight,
            los,
        })
    }

    fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> CMatrix {
        let a = self.gain_sqrt * self.los_weight;
        let b = self.gain_sqrt * self.nlos_weight;
        CMatrix::from_fn(self.los.rows(), self.los.cols(), |i, j| {
            self.los[(i, j)] * a + complex_normal(rng, 1.0) * b
        })
    }
}

/// Far-field LoS matrix from array `src` (offsets around `src_pos`) to array
/// `dst`, shape `dst.len() × src.len()`.
fn los_matrix(src_pos: Point, src: &[Point], dst_pos: Point, dst: &[Point], wavelength: f64) -> CMatrix {
    let d = distance(src_pos, dst_pos);
    let u = scale(sub(dst_pos, src_pos), 1.0 / d);
    let k = 2.0 * std::f64::consts::PI / wavelength;
    CMatrix::from_fn(dst.len(), src.len(), |i, j| {
        let path = d + dot(dst[i], u) - dot(src[j], u);
        C64::from_polar(1.0, -k * path)
    })
}

/// Precomputed deterministic parts of all three links.
pub struct ChannelSampler {
    direct: LinkModel,
    tx_ms: LinkModel,
    ms_rx: LinkModel,
}

impl ChannelSampler {
    pub fn new(geom: &NodeGeometry, params: &FadingParams) -> Result<Self> {
        geom.validate()?;
        params.validate()?;
        let lambda = params.wavelength;
        let tx = geom.ula_offsets(geom.tx_antennas, lambda);
        let rx = geom.ula_offsets(geom.rx_antennas, lambda);
        let ms = geom.ms_offsets();
        let exit = geom.ms_exit_pos();
        let direct = LinkModel::new(
            los_matrix(geom.tx_pos, &tx, geom.rx_pos, &rx, lambda),
            geom.direct_distance(),
            params.kappa_direct_db,
            params,
        )?;
        let tx_ms = LinkModel::new(
            los_matrix(geom.tx_pos, &tx, geom.ms_pos, &ms, lambda),
            geom.tx_ms_distance(),
            params.kappa_tx_ms_db,
            params,
        )?;
        let ms_rx = LinkModel::new(
            los_matrix(exit, &ms, geom.rx_pos, &rx, lambda),
            geom.ms_rx_distance(),
            params.kappa_ms_rx_db,
            params,
        )?;
        Ok(ChannelSampler { direct, tx_ms, ms_rx })
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R, frame: u64) -> ChannelRealization {
        let h_d = self.direct.sample(rng);
        // TX→surface is N_m×N_t; stored as its adjoint so that it enters as H_1ᴴ.
        let h_1 = self.tx_ms.sample(rng).adjoint();
        let h_2 = self.ms_rx.sample(rng);
        ChannelRealization { h_d, h_1, h_2, frame }
    }
}

pub fn sample_channel<R: rand::Rng + ?Sized>(
    geom: &NodeGeometry,
    params: &FadingParams,
    rng: &mut R,
) -> Result<ChannelRealization> {
    Ok(ChannelSampler::new(geom, params)?.sample(rng, 0))
}

/// An ordered, immutable set of channel realizations.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSet {
    realizations: Vec<ChannelRealization>,
    seed: u64,
    params: FadingParams,
}

impl ChannelSet {
    pub fn new(realizations: Vec<ChannelRealization>, seed: u64, params: FadingParams) -> Result<Self> {
        let first = realizations
            .first()
            .ok_or_else(|| Error::Domain("channel set must not be empty".into()))?;
        let shape = (first.h_d.shape(), first.h_1.shape(), first.h_2.shape());
        for h in &realizations {
            h.validate()?;
            if (h.h_d.shape(), h.h_1.shape(), h.h_2.shape()) != shape {
                return Err(Error::dim("realizations in a channel set must share shapes"));
            }
        }
        Ok(ChannelSet { realizations, seed, params })
    }

    pub fn realizations(&self) -> &[ChannelRealization] {
        &self.realizations
    }

    pub fn get(&self, i: usize) -> &ChannelRealization {
        &self.realizations[i]
    }

    pub fn len(&self) -> usize {
        self.realizations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.realizations.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &FadingParams {
        &self.params
    }

    /// (N_r, N_t, N_m)
    pub fn dims(&self) -> (usize, usize, usize) {
        let h = &self.realizations[0];
        (h.n_r(), h.n_t(), h.n_m())
    }

    /// Mean per-entry power of each link over the set: (H_D, H_1, H_2).
    pub fn mean_link_power(&self) -> [f64; 3] {
        let mut acc = [0.0; 3];
        for h in &self.realizations {
            for (a, m) in acc.iter_mut().zip([&h.h_d, &h.h_1, &h.h_2]) {
                *a += m.as_slice().iter().map(|z| z.norm_sqr()).sum::<f64>() / m.as_slice().len() as f64;
            }
        }
        acc.map(|a| a / self.realizations.len() as f64)
    }
}

/// Draws `count` independent realizations from a ChaCha stream seeded with `seed`.
pub fn generate_channel_set(
    count: usize,
    geom: &NodeGeometry,
    params: &FadingParams,
    seed: u64,
) -> Result<ChannelSet> {
    if count == 0 {
        return Err(Error::Domain("channel set size must be positive".into()));
    }
    let sampler = ChannelSampler::new(geom, params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let realizations = (0..count).map(|t| sampler.sample(&mut rng, t as u64)).collect();
    ChannelSet::new(realizations, seed, *params)
}

fn add(a: Point, b: Point) -> Point {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn scale(a: Point, s: f64) -> Point {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn distance(a: Point, b: Point) -> f64 {
    dot(sub(a, b), sub(a, b)).sqrt()
}
