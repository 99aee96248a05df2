//! The five pipeline stages and the run-directory layout they share.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use vunwrap_core::calibration::{difference_image, find_axis_in, AxisCalibration, DifferenceImage};
use vunwrap_core::image::DisplayRange;
use vunwrap_core::metrics::{score_against_spiral, SheetScore};
use vunwrap_core::phantom::{flattened_reference, PhantomSpec, Spiral, TextTexture};
use vunwrap_core::preprocess::{extract_slice_sinogram, Crop, ProjectionStack, RectifyParams};
use vunwrap_core::projection::{acquire_volume, Acquisition, Geometry, NoiseModel};
use vunwrap_core::recon::{apply_mask, fbp, FilterSpec, MaskSpec, ReconSlice};
use vunwrap_core::segmentation::{fit_spline, optimize_with, ControlPoints, GAConfig, SpiralPath};
use vunwrap_core::unwrap::{mip_flatten, mip_z, render_preview, texture, Provenance, UnwrappedSheet, Volume};
use vunwrap_core::{Error, Image2D, Result};

use crate::config::PipelineConfig;
use crate::manifest::{ArtifactRecord, Manifest, Stage, StageRecord};
use crate::store::{
    frame_file_name, raw_paths, read_frames, read_json, read_raw, read_raw_frame, write_json, write_png16, write_png8, write_raw,
    FramesMeta, RawMeta, FRAMES_META,
};

/// Seed-stream offset for the analytic seed-point jitter.
const JITTER_STREAM: u64 = 0x5eed;

/// File names inside a run directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn frames_dir(&self) -> PathBuf {
        self.root.join("frames")
    }

    pub fn frames_meta(&self) -> PathBuf {
        self.frames_dir().join(FRAMES_META)
    }

    pub fn ground_truth(&self) -> PathBuf {
        self.root.join("ground_truth.json")
    }

    pub fn reference_stem(&self) -> PathBuf {
        self.root.join("reference")
    }

    pub fn calibration(&self) -> PathBuf {
        self.root.join("calibration.json")
    }

    pub fn volume_stem(&self) -> PathBuf {
        self.root.join("volume")
    }

    pub fn control_points(&self) -> PathBuf {
        self.root.join("control_points.json")
    }

    pub fn path(&self) -> PathBuf {
        self.root.join("path.json")
    }

    pub fn sheet_stem(&self) -> PathBuf {
        self.root.join("sheet")
    }

    pub fn sheet_png(&self) -> PathBuf {
        self.root.join("sheet.png")
    }

    pub fn preview_png(&self) -> PathBuf {
        self.root.join("preview.png")
    }

    pub fn mip_z_png(&self) -> PathBuf {
        self.root.join("mip_z.png")
    }

    fn require(&self, path: &Path, stage: Stage, missing: Stage) -> Result<()> {
        if path.exists() {
            Ok(())
        } else {
            Err(Error::Dependency {
                stage: stage.name(),
                missing: missing.name(),
            })
        }
    }

    pub fn load_stack(&self) -> Result<ProjectionStack> {
        let (frames, meta) = read_frames(&self.frames_dir())?;
        ProjectionStack::new(frames, meta.geometry)
    }

    pub fn load_frames_meta(&self) -> Result<FramesMeta> {
        read_json(&self.frames_meta())
    }

    pub fn load_calibration(&self) -> Result<CalibrationRecord> {
        read_json(&self.calibration())
    }

    pub fn load_volume(&self) -> Result<(Vec<ReconSlice>, RawMeta)> {
        let (images, meta) = read_raw(&self.volume_stem())?;
        let info: VolumeInfo =
            serde_json::from_value(meta.extra.clone()).map_err(|e| Error::format(raw_paths(&self.volume_stem()).1, e.to_string()))?;
        let slices = images
            .into_iter()
            .map(|image| ReconSlice {
                image,
                geometry: info.geometry,
                filter: info.filter,
            })
            .collect();
        Ok((slices, meta))
    }

    /// One reconstructed slice, read without loading the whole volume.
    pub fn load_slice(&self, z: usize) -> Result<ReconSlice> {
        let stem = self.volume_stem();
        let (image, meta) = read_raw_frame(&stem, z)?;
        let info: VolumeInfo =
            serde_json::from_value(meta.extra).map_err(|e| Error::format(raw_paths(&stem).1, e.to_string()))?;
        Ok(ReconSlice {
            image,
            geometry: info.geometry,
            filter: info.filter,
        })
    }

    pub fn load_path(&self) -> Result<PathRecord> {
        read_json(&self.path())
    }

    pub fn load_ground_truth(&self) -> Result<Option<(GroundTruthRecord, Image2D)>> {
        if !self.ground_truth().exists() {
            return Ok(None);
        }
        let gt: GroundTruthRecord = read_json(&self.ground_truth())?;
        let (mut reference, _) = read_raw(&self.reference_stem())?;
        Ok(Some((gt, reference.remove(0))))
    }

    pub fn load_sheet(&self) -> Result<(UnwrappedSheet, SheetInfo)> {
        let (mut images, meta) = read_raw(&self.sheet_stem())?;
        let info: SheetInfo =
            serde_json::from_value(meta.extra).map_err(|e| Error::format(raw_paths(&self.sheet_stem()).1, e.to_string()))?;
        let sheet = UnwrappedSheet {
            image: images.remove(0),
            band_halfwidth: info.band_halfwidth,
            provenance: info.provenance.clone(),
            z_offset: info.z_offset,
        };
        Ok((sheet, info))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub spiral: Spiral,
    pub arc_length: f64,
    /// True axis column and tilt on the raw frames.
    pub center_column: f64,
    pub tilt: f64,
    pub slice_rows: (usize, usize),
    pub texture: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMethod {
    Search,
    Manual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub calibration: AxisCalibration,
    pub rectify: RectifyParams,
    pub method: CalibrationMethod,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeInfo {
    pub geometry: Geometry,
    pub filter: FilterSpec,
    pub mask: MaskSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub reference_slice: usize,
    pub seed: ControlPoints,
    pub optimized: bool,
    pub fitness: f64,
    /// Best fitness after each generation.
    pub history: Vec<f64>,
    pub path: SpiralPath,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SheetInfo {
    pub band_halfwidth: f64,
    /// Arc length between sheet columns, pixels.
    pub spacing: f64,
    pub arc_length: f64,
    pub z_offset: usize,
    pub provenance: Provenance,
    pub display: DisplayRange,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<SheetScore>,
}

/// Files written and read by one stage run, plus its summary.
struct StageOutput {
    outputs: Vec<PathBuf>,
    inputs: Vec<PathBuf>,
    summary: serde_json::Value,
}

/// A configured run directory.
#[derive(Debug, Clone)]
pub struct Pipeline {
    config: PipelineConfig,
    layout: Layout,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config.output);
        fs::create_dir_all(&layout.root).map_err(|e| Error::io(&layout.root, e))?;
        Ok(Self { config, layout })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Runs `stage` (every stage in order for [`Stage::All`]) and returns
    /// the updated manifest.
    pub fn run(&self, stage: Stage) -> Result<Manifest> {
        match stage {
            Stage::All => {
                for s in Stage::ORDER {
                    if s == Stage::Segment && self.config.segment.control_points.is_none() {
                        self.write_seed_points()?;
                    }
                    self.run_one(s)?;
                }
            }
            s => self.run_one(s)?,
        }
        Manifest::load(&self.layout.root)
    }

    fn run_one(&self, stage: Stage) -> Result<()> {
        let start = Instant::now();
        let out = match stage {
            Stage::Simulate => self.simulate(),
            Stage::Calibrate => self.calibrate(),
            Stage::Reconstruct => self.reconstruct(),
            Stage::Segment => self.segment(),
            Stage::Unwrap => self.unwrap(),
            Stage::All => unreachable!("expanded by run"),
        }
        .map_err(|e| e.in_stage(stage.name()))?;
        self.record(stage, out, start.elapsed().as_secs_f64())
    }

    fn record(&self, stage: Stage, out: StageOutput, seconds: f64) -> Result<()> {
        let root = &self.layout.root;
        let hash = |paths: &[PathBuf]| paths.iter().map(|p| ArtifactRecord::of(root, p)).collect::<Result<Vec<_>>>();
        let record = StageRecord {
            outputs: hash(&out.outputs)?,
            inputs: hash(&out.inputs)?,
            seconds,
            summary: out.summary,
        };
        let mut manifest = Manifest::load(root)?;
        manifest.record(stage, record);
        manifest.save(root)
    }

    /// Sheet texture and the phantom spec resized to match it.
    pub fn texture(&self) -> Result<(PhantomSpec, TextTexture)> {
        let mut spec = self.config.phantom.clone();
        let t = &self.config.texture;
        let tex = match &t.image {
            Some(path) => {
                let tex = TextTexture::from_image_file(path)?;
                (spec.sheet_height_px, spec.sheet_width_px) = tex.pixels.dim();
                tex
            }
            None => TextTexture::glyphs(&t.text, spec.sheet_height_px, spec.sheet_width_px, t.scale),
        };
        spec.validate()?;
        Ok((spec, tex))
    }

    fn simulate(&self) -> Result<StageOutput> {
        let cfg = &self.config;
        let (spec, tex) = self.texture()?;
        let acq = Acquisition {
            i0: cfg.acquisition.i0,
            noise: NoiseModel::new(cfg.acquisition.noise_sd, cfg.seed),
            row_margin: cfg.acquisition.row_margin,
        };
        let frames = acquire_volume(&spec, &tex, &cfg.geometry, &acq)?;
        let (rows, cols) = frames[0].data.dim();
        let slice_rows = (acq.row_margin, acq.row_margin + spec.sheet_height_px);
        let meta = FramesMeta {
            count: frames.len(),
            rows,
            cols,
            scale: acq.i0,
            geometry: Geometry {
                center_offset: 0.0,
                tilt: 0.0,
                ..cfg.geometry
            },
            slice_rows: Some(slice_rows),
            files: (0..frames.len()).map(|i| frame_file_name(i, frames.len())).collect(),
        };
        let dir = self.layout.frames_dir();
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        let mut outputs = crate::store::write_frames(&dir, &frames, &meta)?;

        let truth = flattened_reference(&spec, &tex)?;
        let stem = self.layout.reference_stem();
        write_raw(&stem, &[truth.flattened_reference], &["z", "arc"], serde_json::Value::Null)?;
        let (data, sidecar) = raw_paths(&stem);
        outputs.extend([data, sidecar]);
        let gt = GroundTruthRecord {
            spiral: truth.spiral,
            arc_length: truth.arc_length,
            center_column: cfg.geometry.axis_column(),
            tilt: cfg.geometry.tilt,
            slice_rows,
            texture: tex.origin_note.clone(),
        };
        write_json(&self.layout.ground_truth(), &gt)?;
        outputs.push(self.layout.ground_truth());
        Ok(StageOutput {
            outputs,
            inputs: vec![],
            summary: json!({ "frames": meta.count, "frame_rows": rows, "frame_cols": cols }),
        })
    }

    fn calibrate(&self) -> Result<StageOutput> {
        let l = &self.layout;
        l.require(&l.frames_meta(), Stage::Calibrate, Stage::Simulate)?;
        let stack = l.load_stack()?;
        let cal = find_axis_in(&stack, self.config.calibration.pairs, &self.config.calibration.search)?;
        let record = self.write_calibration(cal, CalibrationMethod::Search)?;
        Ok(StageOutput {
            outputs: vec![l.calibration()],
            inputs: vec![l.frames_meta()],
            summary: self.calibration_summary(&record)?,
        })
    }

    /// Records an axis chosen by hand (or by a client of the service) as the
    /// calibration stage result.
    pub fn accept_calibration(&self, center_column: f64, tilt: f64) -> Result<CalibrationRecord> {
        let l = &self.layout;
        l.require(&l.frames_meta(), Stage::Calibrate, Stage::Simulate)?;
        let start = Instant::now();
        let stack = l.load_stack()?;
        let (rows, cols) = stack.frame_dim();
        let params = RectifyParams {
            center_column,
            tilt,
            crop: Crop::full(rows, cols),
        };
        params.validate(rows, cols)?;
        let i = vunwrap_core::calibration::pair_indices(stack.geometry.num_angles, stack.geometry.angle_range, 1)?[0];
        let residual = difference_image(&stack, i, &params)?.mean_abs();
        let cal = AxisCalibration {
            center_column,
            tilt,
            residual,
            pair_index: i,
        };
        let record = self.write_calibration(cal, CalibrationMethod::Manual)?;
        let out = StageOutput {
            outputs: vec![l.calibration()],
            inputs: vec![l.frames_meta()],
            summary: self.calibration_summary(&record)?,
        };
        self.record(Stage::Calibrate, out, start.elapsed().as_secs_f64())?;
        Ok(record)
    }

    fn write_calibration(&self, cal: AxisCalibration, method: CalibrationMethod) -> Result<CalibrationRecord> {
        let meta = self.layout.load_frames_meta()?;
        let crop = match meta.slice_rows {
            Some((a, b)) if a < b && b <= meta.rows => Crop {
                row0: a,
                col0: 0,
                rows: b - a,
                cols: meta.cols,
            },
            _ => Crop::full(meta.rows, meta.cols),
        };
        let record = CalibrationRecord {
            calibration: cal,
            rectify: RectifyParams {
                center_column: cal.center_column,
                tilt: cal.tilt,
                crop,
            },
            method,
        };
        write_json(&self.layout.calibration(), &record)?;
        Ok(record)
    }

    fn calibration_summary(&self, record: &CalibrationRecord) -> Result<serde_json::Value> {
        let c = &record.calibration;
        let mut s = json!({
            "center_column": c.center_column,
            "tilt_deg": c.tilt.to_degrees(),
            "residual": c.residual,
        });
        if let Some((gt, _)) = self.layout.load_ground_truth()? {
            s["center_error"] = json!(c.center_column - gt.center_column);
            s["tilt_error_deg"] = json!((c.tilt - gt.tilt).to_degrees());
        }
        Ok(s)
    }

    fn reconstruct(&self) -> Result<StageOutput> {
        let l = &self.layout;
        l.require(&l.frames_meta(), Stage::Reconstruct, Stage::Simulate)?;
        l.require(&l.calibration(), Stage::Reconstruct, Stage::Calibrate)?;
        let stack = l.load_stack()?;
        let cal = l.load_calibration()?;
        let grid = self.config.phantom.grid_size;
        let filter = self.config.reconstruct.filter;
        let mut slices = Vec::with_capacity(cal.rectify.crop.rows);
        for z in 0..cal.rectify.crop.rows {
            let sino = extract_slice_sinogram(&stack, &cal.rectify, z)?;
            slices.push(fbp(&sino, grid, &filter)?);
        }
        let mask = match self.config.reconstruct.mask {
            Some(m) => m,
            None => MaskSpec::from_extent(&slices[slices.len() / 2].image, self.config.reconstruct.mask_inner_radius),
        };
        let images = slices
            .iter()
            .map(|s| apply_mask(s, &mask).map(|m| m.image))
            .collect::<Result<Vec<_>>>()?;
        let info = VolumeInfo {
            geometry: slices[0].geometry,
            filter,
            mask,
        };
        let stem = l.volume_stem();
        let meta = write_raw(&stem, &images, &["z", "row", "col"], serde_json::to_value(info).expect("plain data"))?;
        let (data, sidecar) = raw_paths(&stem);
        Ok(StageOutput {
            outputs: vec![data, sidecar],
            inputs: vec![l.frames_meta(), l.calibration()],
            summary: json!({ "slices": images.len(), "grid_size": grid, "mask": mask, "min": meta.min, "max": meta.max }),
        })
    }

    /// Control points along the phantom's analytic spiral, optionally jittered.
    pub fn seed_points(&self) -> Result<ControlPoints> {
        let seg = &self.config.segment;
        let spiral = self.config.phantom.spiral();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ JITTER_STREAM);
        let h = seg.seed_jitter;
        let points = spiral
            .decimated(seg.seed_points_per_turn)
            .into_iter()
            .map(|(x, y)| {
                if h > 0.0 {
                    (x + rng.random_range(-h..=h), y + rng.random_range(-h..=h))
                } else {
                    (x, y)
                }
            })
            .collect();
        ControlPoints::new(points)
    }

    /// Records the spline through `control` as the segment result without
    /// optimising it, as `segment` does with `segment.optimize = false`.
    pub fn accept_path(&self, control: &ControlPoints, smoothing: f64, reference_slice: Option<usize>) -> Result<PathRecord> {
        let l = &self.layout;
        l.require(&raw_paths(&l.volume_stem()).1, Stage::Segment, Stage::Reconstruct)?;
        control.validate()?;
        let mut config = self.config.clone();
        config.segment.control_points = None;
        config.segment.optimize = false;
        config.segment.smoothing = smoothing;
        config.segment.reference_slice = reference_slice.or(config.segment.reference_slice);
        config.validate()?;
        write_json(&l.control_points(), control)?;
        let manual = Pipeline {
            config,
            layout: l.clone(),
        };
        manual.run_one(Stage::Segment)?;
        l.load_path()
    }

    fn write_seed_points(&self) -> Result<()> {
        write_json(&self.layout.control_points(), &self.seed_points()?)
    }

    fn control_points_file(&self) -> PathBuf {
        self.config
            .segment
            .control_points
            .clone()
            .unwrap_or_else(|| self.layout.control_points())
    }

    fn segment(&self) -> Result<StageOutput> {
        let l = &self.layout;
        l.require(&raw_paths(&l.volume_stem()).1, Stage::Segment, Stage::Reconstruct)?;
        let cp_file = self.control_points_file();
        if !cp_file.exists() {
            return Err(Error::Config(format!(
                "control points file {} not found; write one or run `all`",
                cp_file.display()
            )));
        }
        let seed: ControlPoints = read_json(&cp_file)?;
        seed.validate()?;
        let (slices, _) = l.load_volume()?;
        let seg = &self.config.segment;
        let z = seg.reference_slice.unwrap_or(slices.len() / 2);
        let slice = slices.get(z).ok_or(Error::Range {
            what: "reference slice",
            index: z,
            len: slices.len(),
        })?;
        let record = if seg.optimize {
            let ga = GAConfig {
                seed: seg.ga.seed.wrapping_add(self.config.seed),
                ..seg.ga
            };
            let out = optimize_with(slice, &seed, &ga, seg.smoothing, |_| true)?;
            PathRecord {
                reference_slice: z,
                seed,
                optimized: true,
                fitness: out.fitness,
                history: out.history,
                path: out.path,
            }
        } else {
            let path = fit_spline(&seed, seg.smoothing)?;
            let fitness = vunwrap_core::segmentation::fitness(slice, &path).value;
            PathRecord {
                reference_slice: z,
                seed,
                optimized: false,
                fitness,
                history: vec![fitness],
                path,
            }
        };
        write_json(&l.path(), &record)?;
        let mut summary = json!({
            "reference_slice": z,
            "fitness": record.fitness,
            "generations": record.history.len().saturating_sub(1),
            "samples": record.path.samples.len(),
        });
        if let Some((gt, _)) = l.load_ground_truth()? {
            let d: Vec<f64> = record.path.samples.iter().map(|&(x, y)| gt.spiral.nearest(x, y).distance).collect();
            summary["mean_deviation"] = json!(d.iter().sum::<f64>() / d.len() as f64);
            summary["max_deviation"] = json!(d.iter().copied().fold(0.0, f64::max));
        }
        let mut inputs = vec![raw_paths(&l.volume_stem()).0];
        if cp_file.starts_with(&l.root) {
            inputs.push(cp_file);
        }
        Ok(StageOutput {
            outputs: vec![l.path()],
            inputs,
            summary,
        })
    }

    fn unwrap(&self) -> Result<StageOutput> {
        let l = &self.layout;
        l.require(&raw_paths(&l.volume_stem()).1, Stage::Unwrap, Stage::Reconstruct)?;
        l.require(&l.path(), Stage::Unwrap, Stage::Segment)?;
        let (slices, _) = l.load_volume()?;
        let path = l.load_path()?.path;
        let volume = Volume::new(slices.into_iter().map(|s| s.image).collect())?;
        let u = &self.config.unwrap;
        let sheet = mip_flatten(&texture(&volume, &path, u.band_halfwidth)?);
        let (display, range) = sheet.image.normalized(u.low_percentile, u.high_percentile, u.invert);

        let truth = l.load_ground_truth()?;
        let score = match &truth {
            Some((gt, reference)) => Some(score_against_spiral(&sheet, &path.samples, &gt.spiral, reference)?),
            None => None,
        };
        let info = SheetInfo {
            band_halfwidth: sheet.band_halfwidth,
            spacing: path.spacing,
            arc_length: path.arc_length,
            z_offset: sheet.z_offset,
            provenance: sheet.provenance.clone(),
            display: range,
            score,
        };
        let stem = l.sheet_stem();
        write_raw(&stem, &[sheet.image.clone()], &["z", "arc"], serde_json::to_value(&info).expect("plain data"))?;
        write_png16(&l.sheet_png(), &display, 1.0)?;
        let (preview, _) = render_preview(&volume, &path).normalized(0.0, 100.0, false);
        write_png8(&l.preview_png(), &preview)?;
        let (mz, _) = mip_z(&volume).normalized(u.low_percentile, u.high_percentile, u.invert);
        write_png8(&l.mip_z_png(), &mz)?;

        let (data, sidecar) = raw_paths(&stem);
        let mut summary = json!({
            "rows": sheet.image.rows(),
            "cols": sheet.image.cols(),
            "out_of_bounds_samples": sheet.provenance.out_of_bounds_samples,
        });
        if let Some(s) = score {
            summary["ncc"] = json!(s.ncc);
        }
        Ok(StageOutput {
            outputs: vec![data, sidecar, l.sheet_png(), l.preview_png(), l.mip_z_png()],
            inputs: vec![raw_paths(&l.volume_stem()).0, l.path()],
            summary,
        })
    }

    /// Signed pair difference for the axis-finding view.
    pub fn difference(&self, pair_index: usize, center_column: f64, tilt: f64) -> Result<DifferenceImage> {
        let l = &self.layout;
        l.require(&l.frames_meta(), Stage::Calibrate, Stage::Simulate)?;
        let stack = l.load_stack()?;
        let (rows, cols) = stack.frame_dim();
        let params = RectifyParams {
            center_column,
            tilt,
            crop: Crop::full(rows, cols),
        };
        difference_image(&stack, pair_index, &params)
    }
}
