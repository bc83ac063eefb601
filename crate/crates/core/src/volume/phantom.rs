//! Synthetic scan phantoms with exactly known boundary surfaces.
//!
//! A phantom stacks eleven layers of configurable thickness and base
//! intensity between two background regions, adds a foveal pit (inner layers
//! thin toward the pit center while the outer nuclear layer thickens), a
//! smooth lateral undulation of the whole stack, and optional Gaussian
//! intensity noise. The generator returns the volume together with the exact
//! fractional surfaces it used, so segmentation error can be measured
//! against ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::surfaces::{SurfaceSet, LAYER_COUNT};
use crate::volume::{Dims, Volume, VolumeError};

/// Fraction of the pit depth added to the outer nuclear layer (layer 6),
/// mimicking its thickening under the pit.
const PIT_ONL_GAIN: f64 = 0.25;
/// Layers thinned by the pit (0-based): NFL, IPL, INL.
const PIT_THINNED: [usize; 3] = [0, 2, 3];
/// The thinned layers keep at least this fraction of their nominal
/// thickness, which bounds the admissible pit depth.
const PIT_MAX_FRACTION: f64 = 0.9;

/// Parameters of a synthetic phantom. Construct with [`PhantomSpec::new`]
/// and override individual fields as needed.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub dims: Dims,
    /// Axial voxel pitch in µm.
    pub axial_um: f64,
    /// Lateral voxel pitch in µm; defaults span 6 mm in x and z.
    pub lateral_x_um: f64,
    pub lateral_z_um: f64,
    /// Base intensity per layer, top to bottom. Adjacent values must differ.
    pub layer_intensities: [f64; LAYER_COUNT],
    /// Background intensity above surface 1 (vitreous side).
    pub background_above: f64,
    /// Background intensity below surface 12 (choroid side).
    pub background_below: f64,
    /// Nominal layer thicknesses in µm, top to bottom.
    pub layer_thicknesses_um: [f64; LAYER_COUNT],
    /// Peak thinning of the pit-affected inner layers, µm. Zero disables the pit.
    pub pit_depth_um: f64,
    /// Gaussian radius of the pit in µm.
    pub pit_radius_um: f64,
    /// Pit center in pixel coordinates; defaults to the lateral grid center.
    pub pit_center_px: (f64, f64),
    /// Amplitude of the smooth whole-stack undulation, µm.
    pub undulation_um: f64,
    /// Rigid axial shift of the whole stack, µm (positive is deeper).
    pub axial_offset_um: f64,
    /// Standard deviation of additive Gaussian intensity noise.
    pub noise_sd: f64,
    /// Seed for undulation phases and noise; fixed seed ⇒ identical output.
    pub rng_seed: u64,
}

impl PhantomSpec {
    /// A retina-like default: 345 µm total thickness, an 80 µm foveal pit,
    /// 4 µm undulation, no noise.
    pub fn new(dims: Dims, rng_seed: u64) -> Self {
        PhantomSpec {
            dims,
            axial_um: 3.87,
            lateral_x_um: 6000.0 / dims.nx as f64,
            lateral_z_um: 6000.0 / dims.nz as f64,
            // Bright/dark alternation loosely following OCT reflectivity
            // (bright fiber/plexiform and photoreceptor bands between darker
            // nuclear bands). Adjacent layers differ by at least 50 so every
            // boundary is resolvable, while all layers sit far above both
            // backgrounds so the retina/background contrast dominates the
            // layer-to-layer contrast.
            layer_intensities: [
                220.0, 150.0, 205.0, 135.0, 190.0, 120.0, 180.0, 250.0, 130.0, 195.0, 245.0,
            ],
            background_above: 15.0,
            background_below: 35.0,
            layer_thicknesses_um: [
                35.0, 35.0, 35.0, 30.0, 25.0, 80.0, 25.0, 15.0, 25.0, 15.0, 25.0,
            ],
            pit_depth_um: 80.0,
            pit_radius_um: 600.0,
            pit_center_px: ((dims.nx - 1) as f64 / 2.0, (dims.nz - 1) as f64 / 2.0),
            undulation_um: 4.0,
            axial_offset_um: 0.0,
            noise_sd: 0.0,
            rng_seed,
        }
    }

    /// Sum of the nominal layer thicknesses, µm.
    pub fn total_thickness_um(&self) -> f64 {
        self.layer_thicknesses_um.iter().sum()
    }

    fn validate(&self) -> Result<(), VolumeError> {
        let bad = |msg: String| Err(VolumeError::BadPhantom(msg));
        if self.dims.nx == 0 || self.dims.ny == 0 || self.dims.nz == 0 {
            return Err(VolumeError::EmptyDims(self.dims.nx, self.dims.ny, self.dims.nz));
        }
        for (name, v) in [
            ("axial_um", self.axial_um),
            ("lateral_x_um", self.lateral_x_um),
            ("lateral_z_um", self.lateral_z_um),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(VolumeError::BadScale { name, value: v });
            }
        }
        for (k, &t) in self.layer_thicknesses_um.iter().enumerate() {
            if !t.is_finite() || t <= 0.0 {
                return bad(format!("layer {} thickness must be > 0, got {t}", k + 1));
            }
        }
        for (k, w) in self.layer_intensities.windows(2).enumerate() {
            if w[0] == w[1] {
                return bad(format!(
                    "layers {} and {} share base intensity {}; adjacent layers must differ",
                    k + 1,
                    k + 2,
                    w[0]
                ));
            }
        }
        if self.layer_intensities[0] == self.background_above {
            return bad("layer 1 intensity equals the background above it".into());
        }
        if self.layer_intensities[LAYER_COUNT - 1] == self.background_below {
            return bad("layer 11 intensity equals the background below it".into());
        }
        if !self.noise_sd.is_finite() || self.noise_sd < 0.0 {
            return bad(format!("noise_sd must be >= 0, got {}", self.noise_sd));
        }
        if !self.undulation_um.is_finite() || self.undulation_um < 0.0 {
            return bad(format!("undulation_um must be >= 0, got {}", self.undulation_um));
        }
        if self.pit_depth_um < 0.0 || !self.pit_depth_um.is_finite() {
            return bad(format!("pit_depth_um must be >= 0, got {}", self.pit_depth_um));
        }
        if self.pit_depth_um > 0.0 && !(self.pit_radius_um.is_finite() && self.pit_radius_um > 0.0) {
            return bad(format!("pit_radius_um must be > 0, got {}", self.pit_radius_um));
        }
        let thinned_total: f64 = PIT_THINNED.iter().map(|&k| self.layer_thicknesses_um[k]).sum();
        if self.pit_depth_um > PIT_MAX_FRACTION * thinned_total {
            return bad(format!(
                "pit_depth_um {} exceeds {PIT_MAX_FRACTION} of the pit-thinned layers ({thinned_total} µm)",
                self.pit_depth_um
            ));
        }
        let depth_um = self.dims.ny as f64 * self.axial_um;
        let needed = self.total_thickness_um()
            + 2.0 * self.undulation_um
            + 2.0 * self.axial_offset_um.abs()
            + 2.0 * self.axial_um;
        if needed > depth_um {
            return bad(format!(
                "layer thicknesses ({:.1} µm plus margins) exceed the volume depth ({depth_um:.1} µm)",
                self.total_thickness_um()
            ));
        }
        Ok(())
    }
}

/// Generates a phantom volume and its exact reference surfaces.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<(Volume, SurfaceSet), VolumeError> {
    spec.validate()?;
    let Dims { nx, ny, nz } = spec.dims;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let phase_x: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let phase_z: f64 = rng.gen_range(0.0..std::f64::consts::TAU);

    // The stack is built bottom-up from surface 12, so the outer retina stays
    // flat (up to undulation) while pit thinning pulls the inner surfaces down.
    let depth_um = ny as f64 * spec.axial_um;
    let bottom_base_um = (depth_um + spec.total_thickness_um()) / 2.0 + spec.axial_offset_um;
    let thinned_total: f64 = PIT_THINNED.iter().map(|&k| spec.layer_thicknesses_um[k]).sum();

    let mut surfaces = SurfaceSet::zeros(nx, nz);
    for z in 0..nz {
        for x in 0..nx {
            let undulation = spec.undulation_um
                * (std::f64::consts::TAU * x as f64 / nx as f64 + phase_x).sin()
                * (std::f64::consts::TAU * z as f64 / nz as f64 + phase_z).cos();
            let pit = if spec.pit_depth_um > 0.0 {
                let dx = (x as f64 - spec.pit_center_px.0) * spec.lateral_x_um;
                let dz = (z as f64 - spec.pit_center_px.1) * spec.lateral_z_um;
                let rho2 = dx * dx + dz * dz;
                spec.pit_depth_um * (-rho2 / (2.0 * spec.pit_radius_um * spec.pit_radius_um)).exp()
            } else {
                0.0
            };

            let mut depth = bottom_base_um + undulation;
            surfaces.set(LAYER_COUNT, x, z, depth / spec.axial_um);
            for k in (0..LAYER_COUNT).rev() {
                let mut t = spec.layer_thicknesses_um[k];
                if PIT_THINNED.contains(&k) {
                    t -= pit * spec.layer_thicknesses_um[k] / thinned_total;
                } else if k == 5 {
                    t += PIT_ONL_GAIN * pit;
                }
                depth -= t;
                surfaces.set(k, x, z, depth / spec.axial_um);
            }
            let top = surfaces.get(0, x, z);
            let bottom = surfaces.get(LAYER_COUNT, x, z);
            if top < 0.0 || bottom > ny as f64 {
                return Err(VolumeError::BadPhantom(format!(
                    "stack leaves the volume at column ({x}, {z}): surfaces span [{top:.2}, {bottom:.2}] voxels"
                )));
            }
        }
    }

    // Fill voxels by the center rule: voxel row y belongs to the region that
    // contains depth y + 0.5.
    let noise = if spec.noise_sd > 0.0 {
        Some(Normal::new(0.0, spec.noise_sd).expect("validated noise sd"))
    } else {
        None
    };
    let mut data = vec![0u16; spec.dims.len()];
    for z in 0..nz {
        for x in 0..nx {
            let column = surfaces.column_depths(x, z);
            let base_index = ny * (x + nx * z);
            let mut layer = 0usize; // index into regions: 0 = above, 1..=11 layers, 12 = below
            for y in 0..ny {
                let center = y as f64 + 0.5;
                while layer < column.len() && center >= column[layer] {
                    layer += 1;
                }
                let base = if layer == 0 {
                    spec.background_above
                } else if layer <= LAYER_COUNT {
                    spec.layer_intensities[layer - 1]
                } else {
                    spec.background_below
                };
                let value = match &noise {
                    Some(dist) => base + dist.sample(&mut rng),
                    None => base,
                };
                data[base_index + y] = value.round().clamp(0.0, u16::MAX as f64) as u16;
            }
        }
    }

    let volume = Volume::new(spec.dims, spec.axial_um, spec.lateral_x_um, spec.lateral_z_um, data)?;
    Ok((volume, surfaces))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surfaces::SURFACE_COUNT;

    fn small_spec(seed: u64) -> PhantomSpec {
        PhantomSpec::new(Dims::new(24, 128, 4), seed)
    }

    #[test]
    fn phantom_is_deterministic() {
        let spec = PhantomSpec {
            noise_sd: 12.0,
            ..small_spec(77)
        };
        let (va, sa) = generate_phantom(&spec).unwrap();
        let (vb, sb) = generate_phantom(&spec).unwrap();
        assert_eq!(va, vb);
        assert_eq!(sa, sb);
    }

    #[test]
    fn surfaces_are_monotone_and_in_bounds() {
        let (v, s) = generate_phantom(&small_spec(3)).unwrap();
        assert!(s.is_monotone());
        for z in 0..v.dims().nz {
            for x in 0..v.dims().nx {
                assert!(s.get(0, x, z) >= 0.0);
                assert!(s.get(SURFACE_COUNT - 1, x, z) <= v.dims().ny as f64);
            }
        }
    }

    #[test]
    fn voxels_between_surfaces_carry_layer_intensity() {
        let mut spec = small_spec(11);
        spec.noise_sd = 0.0;
        let (v, s) = generate_phantom(&spec).unwrap();
        for z in 0..v.dims().nz {
            for x in 0..v.dims().nx {
                let col = s.column_depths(x, z);
                for (k, &intensity) in spec.layer_intensities.iter().enumerate() {
                    // Probe the voxel at the layer's vertical center.
                    let mid = (col[k] + col[k + 1]) / 2.0;
                    let y = mid.floor() as usize;
                    assert_eq!(v.at(x, y, z), intensity.round() as u16);
                }
                let above = (col[0] / 2.0).floor() as usize;
                assert_eq!(v.at(x, above, z), spec.background_above as u16);
            }
        }
    }

    #[test]
    fn pit_thins_layer_one_at_its_center() {
        let (_, s) = generate_phantom(&small_spec(5)).unwrap();
        let spec = small_spec(5);
        let mut min_thickness = f64::INFINITY;
        let mut argmin = (0usize, 0usize);
        for z in 0..spec.dims.nz {
            for x in 0..spec.dims.nx {
                let t = s.get(1, x, z) - s.get(0, x, z);
                if t < min_thickness {
                    min_thickness = t;
                    argmin = (x, z);
                }
            }
        }
        let (cx, cz) = spec.pit_center_px;
        assert!((argmin.0 as f64 - cx).abs() <= 1.0, "min at {argmin:?}, center {cx}");
        assert!((argmin.1 as f64 - cz).abs() <= 1.0, "min at {argmin:?}, center {cz}");
    }

    #[test]
    fn rejects_overfull_volume() {
        let mut spec = small_spec(1);
        spec.dims = Dims::new(8, 40, 2); // 40 * 3.87 µm < 345 µm of layers
        let err = generate_phantom(&spec).unwrap_err();
        assert!(matches!(err, VolumeError::BadPhantom(_)));
    }

    #[test]
    fn rejects_negative_noise() {
        let mut spec = small_spec(1);
        spec.noise_sd = -1.0;
        assert!(matches!(
            generate_phantom(&spec),
            Err(VolumeError::BadPhantom(_))
        ));
    }

    #[test]
    fn rejects_excessive_pit_depth() {
        let mut spec = small_spec(1);
        spec.pit_depth_um = 500.0;
        assert!(matches!(
            generate_phantom(&spec),
            Err(VolumeError::BadPhantom(_))
        ));
    }

    #[test]
    fn flat_spec_without_pit_keeps_constant_thickness() {
        let mut spec = small_spec(9);
        spec.pit_depth_um = 0.0;
        spec.undulation_um = 0.0;
        let (_, s) = generate_phantom(&spec).unwrap();
        for k in 0..LAYER_COUNT {
            let expect = spec.layer_thicknesses_um[k] / spec.axial_um;
            for z in 0..spec.dims.nz {
                for x in 0..spec.dims.nx {
                    let t = s.get(k + 1, x, z) - s.get(k, x, z);
                    assert!((t - expect).abs() < 1e-9, "layer {k} thickness {t} vs {expect}");
                }
            }
        }
    }
}
