//! Dispersion parameters, their flat vector layout and parameter boxes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest admissible ω₀ (cm⁻¹) when clamping into the validity region.
pub const OMEGA0_FLOOR: f64 = 1e-6;
/// Smallest admissible γ when clamping into the validity region.
pub const GAMMA_FLOOR: f64 = 1e-9;

const ALPHA_SUM_TOL: f64 = 1e-12;

/// One Lorentz oscillator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Band {
    pub omega0: f64,
    pub gamma: f64,
    pub rho: f64,
}

impl Band {
    pub fn new(omega0: f64, gamma: f64, rho: f64) -> Self {
        Self { omega0, gamma, rho }
    }
}

/// The oscillators of one optical axis. An empty bank is a bare dielectric.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OscillatorBank {
    bands: Vec<Band>,
}

impl OscillatorBank {
    pub fn new(bands: Vec<Band>) -> Result<Self> {
        for (i, b) in bands.iter().enumerate() {
            check_band(b).map_err(|m| Error::InvalidParams(format!("band {i}: {m}")))?;
        }
        Ok(Self { bands })
    }

    pub fn bands(&self) -> &[Band] {
        &self.bands
    }

    pub fn len(&self) -> usize {
        self.bands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bands.is_empty()
    }

    pub fn omega0(&self) -> impl Iterator<Item = f64> + '_ {
        self.bands.iter().map(|b| b.omega0)
    }

    pub fn gamma(&self) -> impl Iterator<Item = f64> + '_ {
        self.bands.iter().map(|b| b.gamma)
    }

    pub fn rho(&self) -> impl Iterator<Item = f64> + '_ {
        self.bands.iter().map(|b| b.rho)
    }
}

fn check_band(b: &Band) -> std::result::Result<(), String> {
    if !(b.omega0.is_finite() && b.omega0 > 0.0) {
        return Err(format!("omega0 = {} must be positive", b.omega0));
    }
    if !(b.gamma.is_finite() && b.gamma > 0.0) {
        return Err(format!("gamma = {} must be positive", b.gamma));
    }
    if !(b.rho.is_finite() && b.rho >= 0.0) {
        return Err(format!("rho = {} must be non-negative", b.rho));
    }
    Ok(())
}

/// Oscillator bank plus the relative permittivity baseline of one axis.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisParams {
    bank: OscillatorBank,
    eps_r: f64,
}

impl AxisParams {
    pub fn new(bank: OscillatorBank, eps_r: f64) -> Result<Self> {
        if !(eps_r.is_finite() && eps_r >= 1.0) {
            return Err(Error::InvalidParams(format!(
                "eps_r = {eps_r} must be >= 1"
            )));
        }
        Ok(Self { bank, eps_r })
    }

    pub fn from_bands(eps_r: f64, bands: Vec<Band>) -> Result<Self> {
        Self::new(OscillatorBank::new(bands)?, eps_r)
    }

    /// A bare dielectric (no oscillators).
    pub fn dielectric(eps_r: f64) -> Result<Self> {
        Self::new(OscillatorBank::default(), eps_r)
    }

    pub fn bank(&self) -> &OscillatorBank {
        &self.bank
    }

    pub fn bands(&self) -> &[Band] {
        self.bank.bands()
    }

    pub fn eps_r(&self) -> f64 {
        self.eps_r
    }
}

/// Which physical quantity a flat parameter slot holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Rho { axis: usize, band: usize },
    Omega0 { axis: usize, band: usize },
    Gamma { axis: usize, band: usize },
    EpsR { axis: usize },
    Alpha { axis: usize },
}

/// Shape of a [`DispersionParams`]: band count per axis.
///
/// The flat order is, for each axis in turn, `ρ, ω₀, γ` per band followed by
/// `ε_r`; the axis weights `α` come last.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    bands_per_axis: Vec<usize>,
}

impl ParamLayout {
    pub fn new(bands_per_axis: Vec<usize>) -> Self {
        Self { bands_per_axis }
    }

    pub fn axes(&self) -> usize {
        self.bands_per_axis.len()
    }

    pub fn bands_per_axis(&self) -> &[usize] {
        &self.bands_per_axis
    }

    /// Offset of the first slot belonging to `axis`.
    pub fn axis_offset(&self, axis: usize) -> usize {
        self.bands_per_axis[..axis].iter().map(|k| 3 * k + 1).sum()
    }

    pub fn eps_index(&self, axis: usize) -> usize {
        self.axis_offset(axis) + 3 * self.bands_per_axis[axis]
    }

    pub fn alpha_offset(&self) -> usize {
        self.axis_offset(self.axes())
    }

    pub fn len(&self) -> usize {
        self.alpha_offset() + self.axes()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kinds(&self) -> Vec<ParamKind> {
        let mut out = Vec::with_capacity(self.len());
        for (axis, &k) in self.bands_per_axis.iter().enumerate() {
            for band in 0..k {
                out.push(ParamKind::Rho { axis, band });
                out.push(ParamKind::Omega0 { axis, band });
                out.push(ParamKind::Gamma { axis, band });
            }
            out.push(ParamKind::EpsR { axis });
        }
        out.extend((0..self.axes()).map(|axis| ParamKind::Alpha { axis }));
        out
    }
}

/// Full dispersion model parameters: one or two optical axes mixed with
/// convex weights `alpha`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct DispersionParams {
    axes: Vec<AxisParams>,
    alpha: Vec<f64>,
}

impl DispersionParams {
    pub fn new(axes: Vec<AxisParams>, alpha: Vec<f64>) -> Result<Self> {
        if axes.is_empty() || axes.len() > 2 {
            return Err(Error::InvalidParams(format!(
                "axis count must be 1 or 2, got {}",
                axes.len()
            )));
        }
        if alpha.len() != axes.len() {
            return Err(Error::InvalidParams(format!(
                "{} axis weights for {} axes",
                alpha.len(),
                axes.len()
            )));
        }
        if alpha.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(Error::InvalidParams(format!(
                "axis weights must be non-negative: {alpha:?}"
            )));
        }
        let sum: f64 = alpha.iter().sum();
        if (sum - 1.0).abs() > ALPHA_SUM_TOL {
            return Err(Error::InvalidParams(format!(
                "axis weights sum to {sum}, expected 1"
            )));
        }
        Ok(Self { axes, alpha })
    }

    pub fn single(axis: AxisParams) -> Self {
        Self {
            axes: vec![axis],
            alpha: vec![1.0],
        }
    }

    /// Axes with uniform weights.
    pub fn uniform(axes: Vec<AxisParams>) -> Result<Self> {
        let m = axes.len().max(1);
        Self::new(axes, vec![1.0 / m as f64; m])
    }

    pub fn axes(&self) -> &[AxisParams] {
        &self.axes
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn band_count(&self) -> usize {
        self.axes.iter().map(|a| a.bank.len()).sum()
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(self.axes.iter().map(|a| a.bank.len()).collect())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.layout().len());
        for axis in &self.axes {
            for b in axis.bands() {
                out.extend([b.rho, b.omega0, b.gamma]);
            }
            out.push(axis.eps_r);
        }
        out.extend(&self.alpha);
        out
    }

    pub fn from_flat(layout: &ParamLayout, flat: &[f64]) -> Result<Self> {
        let (axes, alpha) = unflatten(layout, flat)?;
        let axes = axes
            .into_iter()
            .map(|(eps_r, bands)| AxisParams::from_bands(eps_r, bands))
            .collect::<Result<Vec<_>>>()?;
        Self::new(axes, alpha)
    }
}

fn unflatten(layout: &ParamLayout, flat: &[f64]) -> Result<(Vec<(f64, Vec<Band>)>, Vec<f64>)> {
    if flat.len() != layout.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} values for a layout of {}",
            flat.len(),
            layout.len()
        )));
    }
    let mut axes = Vec::with_capacity(layout.axes());
    let mut pos = 0;
    for &k in layout.bands_per_axis() {
        let bands = flat[pos..pos + 3 * k]
            .chunks_exact(3)
            .map(|c| Band::new(c[1], c[2], c[0]))
            .collect();
        pos += 3 * k;
        axes.push((flat[pos], bands));
        pos += 1;
    }
    Ok((axes, flat[pos..].to_vec()))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAxis {
    eps_r: f64,
    bands: Vec<Band>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    axes: Vec<RawAxis>,
    alpha: Vec<f64>,
}

impl RawParams {
    fn layout(&self) -> ParamLayout {
        ParamLayout::new(self.axes.iter().map(|a| a.bands.len()).collect())
    }

    fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for a in &self.axes {
            for b in &a.bands {
                out.extend([b.rho, b.omega0, b.gamma]);
            }
            out.push(a.eps_r);
        }
        out.extend(&self.alpha);
        out
    }

    fn from_flat(layout: &ParamLayout, flat: &[f64]) -> Self {
        let (axes, alpha) = unflatten(layout, flat).expect("layout matches");
        Self {
            axes: axes
                .into_iter()
                .map(|(eps_r, bands)| RawAxis { eps_r, bands })
                .collect(),
            alpha,
        }
    }
}

impl TryFrom<RawParams> for DispersionParams {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        let axes = raw
            .axes
            .into_iter()
            .enumerate()
            .map(|(i, a)| {
                AxisParams::from_bands(a.eps_r, a.bands)
                    .map_err(|e| Error::InvalidParams(format!("axis {i}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        DispersionParams::new(axes, raw.alpha)
    }
}

impl From<DispersionParams> for RawParams {
    fn from(p: DispersionParams) -> Self {
        RawParams {
            axes: p
                .axes
                .into_iter()
                .map(|a| RawAxis {
                    eps_r: a.eps_r,
                    bands: a.bank.bands,
                })
                .collect(),
            alpha: p.alpha,
        }
    }
}

/// Elementwise bounds `[lower, upper]` over the flat layout of a
/// [`DispersionParams`].
///
/// Both bounds must themselves satisfy the per-slot validity rules
/// (ω₀ > 0, γ > 0, ρ ≥ 0, ε_r ≥ 1, 0 ≤ α ≤ 1); the axis weights of a bound
/// need not sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox", into = "RawBox")]
pub struct ParamBox {
    layout: ParamLayout,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ParamBox {
    pub fn new(layout: ParamLayout, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != layout.len() || upper.len() != layout.len() {
            return Err(Error::InvalidBox(format!(
                "bounds of length {}/{} for a layout of {}",
                lower.len(),
                upper.len(),
                layout.len()
            )));
        }
        for (i, kind) in layout.kinds().into_iter().enumerate() {
            let (lo, hi) = (lower[i], upper[i]);
            if !(lo <= hi) {
                return Err(Error::InvalidBox(format!(
                    "slot {i} ({kind:?}): lower {lo} > upper {hi}"
                )));
            }
            let ok = |v: f64| match kind {
                ParamKind::Rho { .. } => v >= 0.0,
                ParamKind::Omega0 { .. } | ParamKind::Gamma { .. } => v > 0.0,
                ParamKind::EpsR { .. } => v >= 1.0,
                ParamKind::Alpha { .. } => (0.0..=1.0).contains(&v),
            } && v.is_finite();
            if !ok(lo) || !ok(hi) {
                return Err(Error::InvalidBox(format!(
                    "slot {i} ({kind:?}): bounds [{lo}, {hi}] violate parameter validity"
                )));
            }
        }
        Ok(Self {
            layout,
            lower,
            upper,
        })
    }

    /// Zero-width box pinned at `params`.
    pub fn point(params: &DispersionParams) -> Self {
        let flat = params.to_flat();
        Self {
            layout: params.layout(),
            lower: flat.clone(),
            upper: flat,
        }
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, params: &DispersionParams) -> bool {
        params.layout() == self.layout && self.contains_flat(&params.to_flat())
    }

    pub fn contains_flat(&self, flat: &[f64]) -> bool {
        flat.len() == self.lower.len()
            && flat
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| lo <= v && v <= hi)
    }

    pub fn clamp(&self, flat: &mut [f64]) {
        for (v, (lo, hi)) in flat.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBox {
    lower: RawParams,
    upper: RawParams,
}

impl TryFrom<RawBox> for ParamBox {
    type Error = Error;

    fn try_from(raw: RawBox) -> Result<Self> {
        let layout = raw.lower.layout();
        if raw.upper.layout() != layout {
            return Err(Error::InvalidBox(
                "lower and upper have different shapes".into(),
            ));
        }
        if raw.lower.alpha.len() != layout.axes() || raw.upper.alpha.len() != layout.axes() {
            return Err(Error::InvalidBox(
                "one alpha bound per axis required".into(),
            ));
        }
        ParamBox::new(layout, raw.lower.flat(), raw.upper.flat())
    }
}

impl From<ParamBox> for RawBox {
    fn from(b: ParamBox) -> Self {
        RawBox {
            lower: RawParams::from_flat(&b.layout, &b.lower),
            upper: RawParams::from_flat(&b.layout, &b.upper),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_axis() -> DispersionParams {
        DispersionParams::new(
            vec![
                AxisParams::from_bands(
                    1.5,
                    vec![Band::new(500.0, 0.1, 0.2), Band::new(900.0, 0.05, 0.1)],
                )
                .unwrap(),
                AxisParams::from_bands(2.0, vec![Band::new(700.0, 0.2, 0.3)]).unwrap(),
            ],
            vec![0.25, 0.75],
        )
        .unwrap()
    }

    #[test]
    fn flat_layout_order() {
        let p = two_axis();
        let layout = p.layout();
        assert_eq!(layout.len(), 7 + 4 + 2);
        assert_eq!(layout.eps_index(0), 6);
        assert_eq!(layout.axis_offset(1), 7);
        assert_eq!(layout.alpha_offset(), 11);
        let flat = p.to_flat();
        assert_eq!(&flat[..4], &[0.2, 500.0, 0.1, 0.1]);
        assert_eq!(flat[layout.eps_index(1)], 2.0);
        assert_eq!(DispersionParams::from_flat(&layout, &flat).unwrap(), p);
        assert_eq!(layout.kinds()[4], ParamKind::Omega0 { axis: 0, band: 1 });
    }

    #[test]
    fn invariants_enforced() {
        assert!(AxisParams::dielectric(0.99).is_err());
        assert!(OscillatorBank::new(vec![Band::new(0.0, 0.1, 0.1)]).is_err());
        assert!(OscillatorBank::new(vec![Band::new(10.0, 0.0, 0.1)]).is_err());
        assert!(OscillatorBank::new(vec![Band::new(10.0, 0.1, -0.1)]).is_err());
        let a = AxisParams::dielectric(2.0).unwrap();
        assert!(DispersionParams::new(vec![a.clone(), a.clone()], vec![0.5, 0.6]).is_err());
        assert!(DispersionParams::new(vec![a.clone(); 3], vec![1.0 / 3.0; 3]).is_err());
        assert!(DispersionParams::new(vec![a], vec![1.0]).is_ok());
    }

    #[test]
    fn json_schema_and_unknown_fields() {
        let p = two_axis();
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.starts_with(
            r#"{"axes":[{"eps_r":1.5,"bands":[{"omega0":500.0,"gamma":0.1,"rho":0.2}"#
        ));
        let back: DispersionParams = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);

        let bad = r#"{"axes":[{"eps_r":1.5,"bands":[],"colour":1}],"alpha":[1.0]}"#;
        let err = serde_json::from_str::<DispersionParams>(bad)
            .unwrap_err()
            .to_string();
        assert!(err.contains("colour"), "{err}");
        let invalid = r#"{"axes":[{"eps_r":0.5,"bands":[]}],"alpha":[1.0]}"#;
        assert!(serde_json::from_str::<DispersionParams>(invalid).is_err());
    }

    #[test]
    fn box_validation_and_json() {
        let p = two_axis();
        let b = ParamBox::point(&p);
        assert!(b.contains(&p));
        let s = serde_json::to_string(&b).unwrap();
        let back: ParamBox = serde_json::from_str(&s).unwrap();
        assert_eq!(back, b);

        let layout = p.layout();
        let mut lo = p.to_flat();
        let hi = p.to_flat();
        lo[0] = 1.0; // rho lower above upper
        assert!(ParamBox::new(layout.clone(), lo, hi.clone()).is_err());
        let mut lo = p.to_flat();
        lo[1] = 0.0; // omega0 bound must be > 0
        assert!(ParamBox::new(layout, lo, hi).is_err());
    }
}
