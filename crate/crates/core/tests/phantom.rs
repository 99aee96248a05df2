use vunwrap_core::phantom::{flattened_reference, PhantomSpec, SheetRaster, TextTexture};
use vunwrap_core::Image2D;

fn spec() -> PhantomSpec {
    let mut s = PhantomSpec {
        sheet_width_px: 0,
        sheet_height_px: 5,
        inner_radius: 15.0,
        layer_spacing: 9.0,
        num_turns: 2.5,
        sheet_thickness: 2.0,
        ink_attenuation: 0.3,
        substrate_attenuation: 0.1,
        grid_size: 96,
    };
    s.sheet_width_px = s.spiral().total_arc_length().round() as usize;
    s
}

#[test]
fn sheet_mass_is_thickness_times_arc_length() {
    let s = spec();
    let raster = SheetRaster::new(&s).unwrap();
    let arc = s.spiral().total_arc_length();
    let blank = raster.slice(&TextTexture::blank(5, s.sheet_width_px), 0).unwrap();
    let expected = s.substrate_attenuation * s.sheet_thickness * arc;
    // The two rounded end caps add roughly thickness^2 of extra area.
    assert!((blank.sum() - expected).abs() / expected < 0.02, "{} vs {expected}", blank.sum());

    let inked = TextTexture::new(Image2D::filled(5, s.sheet_width_px, 1.0), "solid").unwrap();
    let full = raster.slice(&inked, 2).unwrap();
    let expected = s.ink_attenuation * s.sheet_thickness * arc;
    assert!((full.sum() - expected).abs() / expected < 0.02);
}

#[test]
fn geometry_does_not_depend_on_z() {
    let s = spec();
    let raster = SheetRaster::new(&s).unwrap();
    let tex = TextTexture::blank(5, s.sheet_width_px);
    let first = raster.slice(&tex, 0).unwrap();
    for z in 1..5 {
        assert_eq!(raster.slice(&tex, z).unwrap(), first);
    }
}

#[test]
fn one_ink_column_lands_at_its_arc_position() {
    let s = spec();
    let col = s.sheet_width_px / 3;
    let mut px = Image2D::zeros(5, s.sheet_width_px);
    for r in 0..5 {
        px.set(r, col, 1.0);
    }
    let tex = TextTexture::new(px, "column").unwrap();
    let raster = SheetRaster::new(&s).unwrap();
    let img = raster.slice(&tex, 1).unwrap();
    let spiral = s.spiral();
    let arc = (col as f64 + 0.5) * spiral.total_arc_length() / s.sheet_width_px as f64;
    let (ax, ay) = spiral.point(spiral.phi_at_arc(arc));
    let mut inked = 0;
    for ((r, c), &v) in img.array().indexed_iter() {
        // Pixels brighter than fully covered substrate must carry ink.
        if v > s.substrate_attenuation + 1e-9 {
            inked += 1;
            let d = (c as f64 - ax).hypot(r as f64 - ay);
            assert!(d < s.sheet_thickness + 1.5, "ink at ({r},{c}) is {d:.2} px from its arc position");
        }
    }
    assert!(inked >= 1);
}

#[test]
fn reference_width_tracks_arc_length() {
    let mut s = spec();
    let tex_w = s.sheet_width_px;
    s.sheet_width_px = tex_w / 2;
    let tex = TextTexture::glyphs("SCROLL", 5, s.sheet_width_px, 1);
    let gt = flattened_reference(&s, &tex).unwrap();
    assert_eq!(gt.flattened_reference.cols(), gt.arc_length.round() as usize);
    assert_eq!(gt.flattened_reference.rows(), 5);
    // Each texture column is stretched over about two reference columns.
    for r in 0..5 {
        for j in 0..gt.flattened_reference.cols() {
            let src = ((j as f64 + 0.5) * s.sheet_width_px as f64 / gt.flattened_reference.cols() as f64) as usize;
            assert_eq!(gt.flattened_reference.get(r, j), tex.pixels.get(r, src.min(s.sheet_width_px - 1)));
        }
    }
}

#[test]
fn texture_loads_from_grayscale_png() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ink.png");
    let mut img = image::GrayImage::new(4, 2);
    img.put_pixel(1, 0, image::Luma([0]));
    img.put_pixel(2, 1, image::Luma([255]));
    img.put_pixel(3, 1, image::Luma([51]));
    img.save(&path).unwrap();
    let tex = TextTexture::from_image_file(&path).unwrap();
    assert_eq!(tex.pixels.dim(), (2, 4));
    assert_eq!(tex.pixels.get(0, 1), 1.0);
    assert_eq!(tex.pixels.get(1, 2), 0.0);
    assert!((tex.pixels.get(1, 3) - 0.8).abs() < 1e-12);
}
