//! Cone-beam scan geometry, forward projector, exact adjoint, and FDK
//! filtered back projection.
//!
//! Conventions:
//! - The rotation axis is the volume z axis; the world origin sits at the
//!   volume center.
//! - At view angle theta the source is at `sad * (cos t, sin t, 0)`; the flat
//!   detector is perpendicular to the central ray at distance `sdd` from the
//!   source, with columns along `(-sin t, cos t, 0)` and rows along z.
//! - Volume values are attenuation per millimeter; projections are therefore
//!   dimensionless optical depths (value * mm).
//! - The projector marches rays with trilinear interpolation; the adjoint
//!   scatters the same sample weights, so it is the exact transpose of the
//!   discretized forward map.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};
use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};

/// Default ray-marching step as a fraction of the voxel pitch.
pub const DEFAULT_STEP_FRAC: f64 = 0.5;

/// Cone-beam acquisition description.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanGeometry {
    pub n_views: usize,
    /// Angular span in degrees; views are equally spaced over it with the
    /// first view at 0 degrees (endpoint excluded).
    pub angular_span_deg: f64,
    pub source_to_axis_mm: f64,
    pub source_to_detector_mm: f64,
    pub detector_rows: usize,
    pub detector_cols: usize,
    pub detector_pixel_mm: f64,
}

impl ScanGeometry {
    /// Desk-scale default: 48x48 detector at magnification 1.5 around a
    /// 32^3 volume of 0.05 mm voxels. The source sits at 9 mm so the half
    /// cone angle stays near 5 degrees; the 180-degree span then leaves only
    /// mild cone-beam artifacts.
    pub fn desk_default(n_views: usize) -> Self {
        ScanGeometry {
            n_views,
            angular_span_deg: 180.0,
            source_to_axis_mm: 9.0,
            source_to_detector_mm: 13.5,
            detector_rows: 48,
            detector_cols: 48,
            detector_pixel_mm: 0.0625,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_views < 1 {
            return Err(Error::Geometry("at least one view is required".into()));
        }
        if !(self.source_to_detector_mm > self.source_to_axis_mm && self.source_to_axis_mm > 0.0) {
            return Err(Error::Geometry(format!(
                "need source_to_detector ({}) > source_to_axis ({}) > 0",
                self.source_to_detector_mm, self.source_to_axis_mm
            )));
        }
        if self.detector_rows == 0 || self.detector_cols == 0 || self.detector_pixel_mm <= 0.0 {
            return Err(Error::Geometry(
                "detector extents and pitch must be positive".into(),
            ));
        }
        if self.angular_span_deg <= 0.0 {
            return Err(Error::Geometry("angular span must be positive".into()));
        }
        Ok(())
    }

    /// View angle in radians; views are equally spaced with the first at 0.
    pub fn view_angle(&self, view: usize) -> f64 {
        let span = self.angular_span_deg.to_radians();
        span * view as f64 / self.n_views as f64
    }

    pub fn view_angles(&self) -> Vec<f64> {
        (0..self.n_views).map(|v| self.view_angle(v)).collect()
    }

    pub fn magnification(&self) -> f64 {
        self.source_to_detector_mm / self.source_to_axis_mm
    }

    fn pixels_per_view(&self) -> usize {
        self.detector_rows * self.detector_cols
    }
}

/// 3D attenuation grid with isotropic voxel pitch. Values are stored with x
/// fastest: `values[x + nx * (y + ny * z)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub voxel_mm: f64,
    pub values: Vec<f32>,
}

impl Volume {
    pub fn zeros(nx: usize, ny: usize, nz: usize, voxel_mm: f64) -> Self {
        Volume {
            nx,
            ny,
            nz,
            voxel_mm,
            values: vec![0.0; nx * ny * nz],
        }
    }

    pub fn new(nx: usize, ny: usize, nz: usize, voxel_mm: f64, values: Vec<f32>) -> Result<Self> {
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::InvalidArgument("volume extents must be >= 1".into()));
        }
        if values.len() != nx * ny * nz {
            return Err(Error::shape_mismatch(
                "volume construction",
                &(nx, ny, nz),
                &values.len(),
            ));
        }
        if voxel_mm <= 0.0 {
            return Err(Error::InvalidArgument("voxel pitch must be positive".into()));
        }
        Ok(Volume {
            nx,
            ny,
            nz,
            voxel_mm,
            values,
        })
    }

    pub fn numel(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.nx * (y + self.ny * z)
    }

    pub fn at(&self, x: usize, y: usize, z: usize) -> f32 {
        self.values[self.index(x, y, z)]
    }

    pub fn same_shape(&self, other: &Volume) -> bool {
        self.nx == other.nx && self.ny == other.ny && self.nz == other.nz
    }

    /// Canonical tensor view with axes (x, y, z), i.e. shape [nx, ny, nz].
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let mut data = vec![T::zero(); self.numel()];
        let (nx, ny, nz) = (self.nx, self.ny, self.nz);
        for x in 0..nx {
            for y in 0..ny {
                for z in 0..nz {
                    data[(x * ny + y) * nz + z] = T::of_f64(self.at(x, y, z) as f64);
                }
            }
        }
        Tensor::new(vec![nx, ny, nz], data).expect("consistent by construction")
    }

    /// Inverse of [`Volume::to_tensor`]; the tensor axes must be (x, y, z).
    pub fn from_tensor<T: Scalar>(tensor: &Tensor<T>, voxel_mm: f64) -> Result<Self> {
        if tensor.rank() != 3 {
            return Err(Error::InvalidArgument(format!(
                "volume tensor must be rank 3, got {:?}",
                tensor.shape()
            )));
        }
        let (nx, ny, nz) = (tensor.shape()[0], tensor.shape()[1], tensor.shape()[2]);
        let mut vol = Volume::zeros(nx, ny, nz, voxel_mm);
        for x in 0..nx {
            for y in 0..ny {
                for z in 0..nz {
                    let v = tensor.data()[(x * ny + y) * nz + z].as_f64() as f32;
                    let idx = vol.index(x, y, z);
                    vol.values[idx] = v;
                }
            }
        }
        Ok(vol)
    }

    /// World coordinate of the voxel center along one axis.
    #[inline]
    pub(crate) fn center_coord(&self, i: usize, extent: usize) -> f64 {
        (i as f64 + 0.5 - extent as f64 / 2.0) * self.voxel_mm
    }

    /// Radius of the bounding sphere around the volume.
    pub fn bounding_radius_mm(&self) -> f64 {
        let hx = self.nx as f64 * self.voxel_mm / 2.0;
        let hy = self.ny as f64 * self.voxel_mm / 2.0;
        let hz = self.nz as f64 * self.voxel_mm / 2.0;
        (hx * hx + hy * hy + hz * hz).sqrt()
    }
}

/// Semantic tag for the values stored in a [`ProjectionStack`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StackKind {
    /// Line integrals of attenuation (optical depth).
    LineIntegral,
    /// Detected intensity `I0 * exp(-Ax)` plus corruption; nonnegative.
    Transmission,
    /// `-log(intensity / I0)`.
    PostLog,
}

impl StackKind {
    pub(crate) fn tag(self) -> u8 {
        match self {
            StackKind::LineIntegral => 0,
            StackKind::Transmission => 1,
            StackKind::PostLog => 2,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(StackKind::LineIntegral),
            1 => Ok(StackKind::Transmission),
            2 => Ok(StackKind::PostLog),
            other => Err(Error::Format(format!("unknown stack kind tag {other}"))),
        }
    }
}

/// Per-view 2D detector images: `data[view][row][col]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionStack {
    pub n_views: usize,
    pub rows: usize,
    pub cols: usize,
    pub angles_rad: Vec<f32>,
    pub kind: StackKind,
    pub data: Vec<f32>,
}

impl ProjectionStack {
    pub fn zeros(geom: &ScanGeometry, kind: StackKind) -> Self {
        ProjectionStack {
            n_views: geom.n_views,
            rows: geom.detector_rows,
            cols: geom.detector_cols,
            angles_rad: geom.view_angles().iter().map(|&a| a as f32).collect(),
            kind,
            data: vec![0.0; geom.n_views * geom.pixels_per_view()],
        }
    }

    pub fn numel(&self) -> usize {
        self.n_views * self.rows * self.cols
    }

    #[inline]
    pub fn index(&self, view: usize, row: usize, col: usize) -> usize {
        (view * self.rows + row) * self.cols + col
    }

    pub fn view(&self, view: usize) -> &[f32] {
        let n = self.rows * self.cols;
        &self.data[view * n..(view + 1) * n]
    }

    pub fn view_mut(&mut self, view: usize) -> &mut [f32] {
        let n = self.rows * self.cols;
        &mut self.data[view * n..(view + 1) * n]
    }

    pub fn matches_geometry(&self, geom: &ScanGeometry) -> bool {
        self.n_views == geom.n_views
            && self.rows == geom.detector_rows
            && self.cols == geom.detector_cols
            && self.angles_rad.len() == self.n_views
    }
}

/// Ray sample schedule shared by the forward projector and its adjoint.
struct Ray {
    origin: [f64; 3],
    dir: [f64; 3],
    t0: f64,
    n_steps: usize,
    dt: f64,
}

fn view_basis(geom: &ScanGeometry, view: usize) -> ([f64; 3], [f64; 3], [f64; 3]) {
    let theta = geom.view_angle(view);
    let (sin_t, cos_t) = theta.sin_cos();
    let source = [
        geom.source_to_axis_mm * cos_t,
        geom.source_to_axis_mm * sin_t,
        0.0,
    ];
    let u_axis = [-sin_t, cos_t, 0.0];
    let v_axis = [0.0, 0.0, 1.0];
    (source, u_axis, v_axis)
}

/// Builds the marching schedule for the ray from the source through one
/// detector pixel center, clipped to the volume bounding box.
fn pixel_ray(
    vol: &Volume,
    geom: &ScanGeometry,
    view: usize,
    row: usize,
    col: usize,
    dt: f64,
) -> Option<Ray> {
    let (source, u_axis, v_axis) = view_basis(geom, view);
    let theta = geom.view_angle(view);
    let (sin_t, cos_t) = theta.sin_cos();
    // Detector center lies on the far side of the axis from the source.
    let det_center = [
        (geom.source_to_axis_mm - geom.source_to_detector_mm) * cos_t,
        (geom.source_to_axis_mm - geom.source_to_detector_mm) * sin_t,
        0.0,
    ];
    let u = (col as f64 + 0.5 - geom.detector_cols as f64 / 2.0) * geom.detector_pixel_mm;
    let v = (row as f64 + 0.5 - geom.detector_rows as f64 / 2.0) * geom.detector_pixel_mm;
    let pixel = [
        det_center[0] + u * u_axis[0] + v * v_axis[0],
        det_center[1] + u * u_axis[1] + v * v_axis[1],
        det_center[2] + u * u_axis[2] + v * v_axis[2],
    ];
    let mut dir = [
        pixel[0] - source[0],
        pixel[1] - source[1],
        pixel[2] - source[2],
    ];
    let norm = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
    for d in &mut dir {
        *d /= norm;
    }

    // Slab clipping against the axis-aligned volume bounds.
    let half = [
        vol.nx as f64 * vol.voxel_mm / 2.0,
        vol.ny as f64 * vol.voxel_mm / 2.0,
        vol.nz as f64 * vol.voxel_mm / 2.0,
    ];
    let mut t_near = 0.0_f64;
    let mut t_far = f64::INFINITY;
    for axis in 0..3 {
        if dir[axis].abs() < 1e-12 {
            if source[axis].abs() > half[axis] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[axis];
        let mut ta = (-half[axis] - source[axis]) * inv;
        let mut tb = (half[axis] - source[axis]) * inv;
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t_near = t_near.max(ta);
        t_far = t_far.min(tb);
    }
    if t_near >= t_far {
        return None;
    }
    let n_steps = ((t_far - t_near) / dt).ceil() as usize;
    if n_steps == 0 {
        return None;
    }
    Some(Ray {
        origin: source,
        dir,
        t0: t_near,
        n_steps,
        dt,
    })
}

/// Trilinear gather at a world point; points outside the grid contribute 0.
#[inline]
fn sample_trilinear(values: &[f64], vol: &Volume, p: [f64; 3]) -> f64 {
    let fx = p[0] / vol.voxel_mm + vol.nx as f64 / 2.0 - 0.5;
    let fy = p[1] / vol.voxel_mm + vol.ny as f64 / 2.0 - 0.5;
    let fz = p[2] / vol.voxel_mm + vol.nz as f64 / 2.0 - 0.5;
    let x0 = fx.floor();
    let y0 = fy.floor();
    let z0 = fz.floor();
    let wx = fx - x0;
    let wy = fy - y0;
    let wz = fz - z0;
    let (ix, iy, iz) = (x0 as isize, y0 as isize, z0 as isize);
    let mut acc = 0.0;
    for (dz, wz_) in [(0isize, 1.0 - wz), (1, wz)] {
        let z = iz + dz;
        if z < 0 || z >= vol.nz as isize {
            continue;
        }
        for (dy, wy_) in [(0isize, 1.0 - wy), (1, wy)] {
            let y = iy + dy;
            if y < 0 || y >= vol.ny as isize {
                continue;
            }
            let wzy = wz_ * wy_;
            for (dx, wx_) in [(0isize, 1.0 - wx), (1, wx)] {
                let x = ix + dx;
                if x < 0 || x >= vol.nx as isize {
                    continue;
                }
                acc += wzy
                    * wx_
                    * values[x as usize + vol.nx * (y as usize + vol.ny * z as usize)];
            }
        }
    }
    acc
}

/// Trilinear scatter: the exact transpose of [`sample_trilinear`].
#[inline]
fn splat_trilinear(values: &mut [f64], vol: &Volume, p: [f64; 3], amount: f64) {
    let fx = p[0] / vol.voxel_mm + vol.nx as f64 / 2.0 - 0.5;
    let fy = p[1] / vol.voxel_mm + vol.ny as f64 / 2.0 - 0.5;
    let fz = p[2] / vol.voxel_mm + vol.nz as f64 / 2.0 - 0.5;
    let x0 = fx.floor();
    let y0 = fy.floor();
    let z0 = fz.floor();
    let wx = fx - x0;
    let wy = fy - y0;
    let wz = fz - z0;
    let (ix, iy, iz) = (x0 as isize, y0 as isize, z0 as isize);
    for (dz, wz_) in [(0isize, 1.0 - wz), (1, wz)] {
        let z = iz + dz;
        if z < 0 || z >= vol.nz as isize {
            continue;
        }
        for (dy, wy_) in [(0isize, 1.0 - wy), (1, wy)] {
            let y = iy + dy;
            if y < 0 || y >= vol.ny as isize {
                continue;
            }
            let wzy = wz_ * wy_;
            for (dx, wx_) in [(0isize, 1.0 - wx), (1, wx)] {
                let x = ix + dx;
                if x < 0 || x >= vol.nx as isize {
                    continue;
                }
                values[x as usize + vol.nx * (y as usize + vol.ny * z as usize)] +=
                    wzy * wx_ * amount;
            }
        }
    }
}

fn check_projection_setup(vol: &Volume, geom: &ScanGeometry) -> Result<()> {
    geom.validate()?;
    if geom.source_to_axis_mm <= vol.bounding_radius_mm() {
        return Err(Error::Geometry(format!(
            "source (radius {} mm) lies inside the volume bounding sphere ({} mm)",
            geom.source_to_axis_mm,
            vol.bounding_radius_mm()
        )));
    }
    Ok(())
}

/// Line-integral forward projection with the default marching step.
pub fn forward_project(vol: &Volume, geom: &ScanGeometry) -> Result<ProjectionStack> {
    forward_project_with_step(vol, geom, DEFAULT_STEP_FRAC)
}

/// Line-integral forward projection; `step_frac` is the marching step as a
/// fraction of the voxel pitch.
pub fn forward_project_with_step(
    vol: &Volume,
    geom: &ScanGeometry,
    step_frac: f64,
) -> Result<ProjectionStack> {
    check_projection_setup(vol, geom)?;
    let values: Vec<f64> = vol.values.iter().map(|&v| v as f64).collect();
    let mut stack = ProjectionStack::zeros(geom, StackKind::LineIntegral);
    let per_view = project_views_f64(&values, vol, geom, step_frac);
    for (view, img) in per_view.into_iter().enumerate() {
        for (dst, src) in stack.view_mut(view).iter_mut().zip(img) {
            *dst = src as f32;
        }
    }
    Ok(stack)
}

/// f64 projection core used by the public API and the TV solver. Views are
/// computed independently (parallel across views) and returned in order.
pub(crate) fn project_views_f64(
    values: &[f64],
    vol: &Volume,
    geom: &ScanGeometry,
    step_frac: f64,
) -> Vec<Vec<f64>> {
    let dt = step_frac * vol.voxel_mm;
    (0..geom.n_views)
        .into_par_iter()
        .map(|view| {
            let mut img = vec![0.0_f64; geom.pixels_per_view()];
            for row in 0..geom.detector_rows {
                for col in 0..geom.detector_cols {
                    if let Some(ray) = pixel_ray(vol, geom, view, row, col, dt) {
                        let mut acc = 0.0;
                        for k in 0..ray.n_steps {
                            let t = ray.t0 + (k as f64 + 0.5) * ray.dt;
                            let p = [
                                ray.origin[0] + t * ray.dir[0],
                                ray.origin[1] + t * ray.dir[1],
                                ray.origin[2] + t * ray.dir[2],
                            ];
                            acc += sample_trilinear(values, vol, p);
                        }
                        img[row * geom.detector_cols + col] = acc * ray.dt;
                    }
                }
            }
            img
        })
        .collect()
}

/// Adjoint of [`forward_project`] (not a reconstruction): computes `A^T y`
/// on the grid described by `vol_like`.
pub fn back_project(
    stack: &ProjectionStack,
    geom: &ScanGeometry,
    vol_like: &Volume,
) -> Result<Volume> {
    back_project_with_step(stack, geom, vol_like, DEFAULT_STEP_FRAC)
}

pub fn back_project_with_step(
    stack: &ProjectionStack,
    geom: &ScanGeometry,
    vol_like: &Volume,
    step_frac: f64,
) -> Result<Volume> {
    if stack.kind == StackKind::Transmission {
        return Err(Error::InvalidArgument(
            "back projection expects line-integral or post-log data".into(),
        ));
    }
    if !stack.matches_geometry(geom) {
        return Err(Error::shape_mismatch(
            "projection stack vs geometry",
            &(stack.n_views, stack.rows, stack.cols),
            &(geom.n_views, geom.detector_rows, geom.detector_cols),
        ));
    }
    check_projection_setup(vol_like, geom)?;
    let per_view: Vec<Vec<f64>> = (0..stack.n_views)
        .map(|v| stack.view(v).iter().map(|&p| p as f64).collect())
        .collect();
    let acc = back_project_views_f64(&per_view, vol_like, geom, step_frac);
    let mut out = Volume::zeros(vol_like.nx, vol_like.ny, vol_like.nz, vol_like.voxel_mm);
    for (dst, src) in out.values.iter_mut().zip(acc) {
        *dst = src as f32;
    }
    Ok(out)
}

/// f64 adjoint core. Per-view partial volumes are computed independently and
/// summed in view order, so the result does not depend on scheduling.
pub(crate) fn back_project_views_f64(
    views: &[Vec<f64>],
    vol: &Volume,
    geom: &ScanGeometry,
    step_frac: f64,
) -> Vec<f64> {
    let dt = step_frac * vol.voxel_mm;
    let partials: Vec<Vec<f64>> = (0..views.len())
        .into_par_iter()
        .map(|view| {
            let img = &views[view];
            let mut acc = vec![0.0_f64; vol.numel()];
            for row in 0..geom.detector_rows {
                for col in 0..geom.detector_cols {
                    let pv = img[row * geom.detector_cols + col];
                    if pv == 0.0 {
                        continue;
                    }
                    if let Some(ray) = pixel_ray(vol, geom, view, row, col, dt) {
                        let amount = pv * ray.dt;
                        for k in 0..ray.n_steps {
                            let t = ray.t0 + (k as f64 + 0.5) * ray.dt;
                            let p = [
                                ray.origin[0] + t * ray.dir[0],
                                ray.origin[1] + t * ray.dir[1],
                                ray.origin[2] + t * ray.dir[2],
                            ];
                            splat_trilinear(&mut acc, vol, p, amount);
                        }
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = vec![0.0_f64; vol.numel()];
    for part in partials {
        for (dst, src) in total.iter_mut().zip(part) {
            *dst += src;
        }
    }
    total
}

/// FDK filtered back projection: cosine pre-weighting, row-wise ramp
/// filtering under a Hann window with the given relative cutoff, and
/// distance-weighted back projection scaled by the angular increment.
pub fn fdk_reconstruct(
    stack: &ProjectionStack,
    geom: &ScanGeometry,
    vol_like: &Volume,
    hann_cutoff: f64,
) -> Result<Volume> {
    if stack.kind == StackKind::Transmission {
        return Err(Error::InvalidArgument(
            "FDK expects line-integral or post-log data".into(),
        ));
    }
    if stack.n_views < 1 || geom.n_views < 1 {
        return Err(Error::Geometry("FDK requires at least one view".into()));
    }
    if !stack.matches_geometry(geom) {
        return Err(Error::shape_mismatch(
            "projection stack vs geometry",
            &(stack.n_views, stack.rows, stack.cols),
            &(geom.n_views, geom.detector_rows, geom.detector_cols),
        ));
    }
    if !(hann_cutoff > 0.0 && hann_cutoff <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "hann cutoff must be in (0, 1], got {hann_cutoff}"
        )));
    }
    geom.validate()?;

    let sad = geom.source_to_axis_mm;
    let mag = geom.magnification();
    // Virtual detector at the rotation axis: physical coordinates divided by
    // the magnification.
    let du = geom.detector_pixel_mm / mag;
    let dv = du;
    let rows = geom.detector_rows;
    let cols = geom.detector_cols;

    // Zero-pad to the next power of two >= 2 * cols to suppress circular
    // convolution wraparound.
    let padded = (2 * cols).next_power_of_two();
    let filter = ramp_hann_filter(padded, du, hann_cutoff);

    // Cosine-weight and row-filter every view (independent per view).
    let filtered: Vec<Vec<f64>> = (0..stack.n_views)
        .into_par_iter()
        .map(|view| {
            let mut planner = FftPlanner::<f64>::new();
            let fft = planner.plan_fft_forward(padded);
            let ifft = planner.plan_fft_inverse(padded);
            let img = stack.view(view);
            let mut out = vec![0.0_f64; rows * cols];
            let mut line = vec![Complex::new(0.0, 0.0); padded];
            for row in 0..rows {
                let v = (row as f64 + 0.5 - rows as f64 / 2.0) * dv;
                for slot in line.iter_mut() {
                    *slot = Complex::new(0.0, 0.0);
                }
                for col in 0..cols {
                    let u = (col as f64 + 0.5 - cols as f64 / 2.0) * du;
                    let cos_w = sad / (sad * sad + u * u + v * v).sqrt();
                    line[col] = Complex::new(img[row * cols + col] as f64 * cos_w, 0.0);
                }
                fft.process(&mut line);
                for (slot, h) in line.iter_mut().zip(&filter) {
                    *slot *= h;
                }
                ifft.process(&mut line);
                // rustfft leaves the inverse unnormalized; fold 1/padded into
                // the quadrature weight du.
                let scale = du / padded as f64;
                for col in 0..cols {
                    out[row * cols + col] = line[col].re * scale;
                }
            }
            out
        })
        .collect();

    // Distance-weighted back projection.
    let d_theta = geom.angular_span_deg.to_radians() / stack.n_views as f64;
    let angles = geom.view_angles();
    let nx = vol_like.nx;
    let ny = vol_like.ny;
    let nz = vol_like.nz;
    let values: Vec<f64> = (0..nz)
        .into_par_iter()
        .flat_map_iter(|z| {
            let pz = vol_like.center_coord(z, nz);
            let mut slab = vec![0.0_f64; nx * ny];
            for (view, img) in filtered.iter().enumerate() {
                let (sin_t, cos_t) = angles[view].sin_cos();
                for y in 0..ny {
                    let py = vol_like.center_coord(y, ny);
                    for x in 0..nx {
                        let px = vol_like.center_coord(x, nx);
                        let dist = sad - (px * cos_t + py * sin_t);
                        if dist <= 0.0 {
                            continue;
                        }
                        let s = -px * sin_t + py * cos_t;
                        let ratio = sad / dist;
                        let u = s * ratio;
                        let v = pz * ratio;
                        let col_f = u / du + cols as f64 / 2.0 - 0.5;
                        let row_f = v / dv + rows as f64 / 2.0 - 0.5;
                        let sample = bilinear(img, rows, cols, row_f, col_f);
                        slab[y * nx + x] += ratio * ratio * sample;
                    }
                }
            }
            slab.into_iter().map(move |acc| acc * d_theta)
        })
        .collect();

    let mut out = Volume::zeros(nx, ny, nz, vol_like.voxel_mm);
    for (dst, src) in out.values.iter_mut().zip(values) {
        *dst = src as f32;
    }
    Ok(out)
}

#[inline]
fn bilinear(img: &[f64], rows: usize, cols: usize, row_f: f64, col_f: f64) -> f64 {
    let r0 = row_f.floor();
    let c0 = col_f.floor();
    let wr = row_f - r0;
    let wc = col_f - c0;
    let (ir, ic) = (r0 as isize, c0 as isize);
    let mut acc = 0.0;
    for (dr, wr_) in [(0isize, 1.0 - wr), (1, wr)] {
        let r = ir + dr;
        if r < 0 || r >= rows as isize {
            continue;
        }
        for (dc, wc_) in [(0isize, 1.0 - wc), (1, wc)] {
            let c = ic + dc;
            if c < 0 || c >= cols as isize {
                continue;
            }
            acc += wr_ * wc_ * img[r as usize * cols + c as usize];
        }
    }
    acc
}

/// Frequency response of the band-limited ramp filter apodized by a Hann
/// window whose support ends at `cutoff` times the Nyquist frequency.
///
/// The ramp comes from transforming the exact spatial-domain kernel
/// (1/(4 du^2) at lag 0, -1/(pi n du)^2 at odd lags), which keeps the DC
/// behavior of the discrete filter correct.
fn ramp_hann_filter(padded: usize, du: f64, cutoff: f64) -> Vec<f64> {
    let mut kernel = vec![Complex::new(0.0, 0.0); padded];
    kernel[0] = Complex::new(1.0 / (4.0 * du * du), 0.0);
    for n in (1..padded / 2).step_by(2) {
        let val = -1.0 / (std::f64::consts::PI * n as f64 * du).powi(2);
        kernel[n] = Complex::new(val, 0.0);
        kernel[padded - n] = Complex::new(val, 0.0);
    }
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(padded).process(&mut kernel);

    let mut filter = vec![0.0_f64; padded];
    for (k, slot) in filter.iter_mut().enumerate() {
        // Frequency of DFT bin k in cycles per sample, in [0, 0.5].
        let freq = if k <= padded / 2 {
            k as f64 / padded as f64
        } else {
            (padded - k) as f64 / padded as f64
        };
        let nu = freq / 0.5; // fraction of Nyquist
        let window = if nu <= cutoff {
            0.5 * (1.0 + (std::f64::consts::PI * nu / cutoff).cos())
        } else {
            0.0
        };
        *slot = kernel[k].re * window;
    }
    filter
}
