//! Procedural proxy corpus: overlapping random shapes on a planar
//! background, rendered at canvas resolution, blurred, downscaled and
//! optionally converted to greyscale.
//!
//! Rendering is addressed by (seed, index): image `i` of a corpus depends
//! only on those two values, so generation order and worker count cannot
//! change a single byte of output.

pub mod raster;

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array3, Array4};
use rand::Rng as _;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kv;
use crate::rng::{stream_rng, Rng};
use crate::tensor::pixel_to_unit;
use raster::Canvas;

/// Shape families available to the renderer, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ShapeKind {
    Triangle,
    Rectangle,
    Circle,
    Ellipse,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [
        ShapeKind::Triangle,
        ShapeKind::Rectangle,
        ShapeKind::Circle,
        ShapeKind::Ellipse,
    ];
}

/// Parameters of one synthetic-image variant.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeImageSpec {
    pub canvas_size: usize,
    pub output_size: usize,
    pub num_shapes: usize,
    pub min_size: usize,
    pub max_size: usize,
    pub shape_palette: Vec<ShapeKind>,
    pub blur_kernel: usize,
    pub greyscale: bool,
}

impl ShapeImageSpec {
    /// Large overlapping shapes: 50 shapes sized 20..50 on a 100px canvas,
    /// downscaled to 32px.
    pub fn large(greyscale: bool) -> Self {
        ShapeImageSpec {
            canvas_size: 100,
            output_size: 32,
            num_shapes: 50,
            min_size: 20,
            max_size: 50,
            shape_palette: ShapeKind::ALL.to_vec(),
            blur_kernel: 4,
            greyscale,
        }
    }

    /// Small textured shapes: 50 shapes sized 5..10.
    pub fn small(greyscale: bool) -> Self {
        ShapeImageSpec {
            num_shapes: 50,
            min_size: 5,
            max_size: 10,
            ..Self::large(greyscale)
        }
    }

    /// Sparse scenes: a handful of mid-sized shapes, which downscale to
    /// images with a few distinct objects.
    pub fn sparse(greyscale: bool) -> Self {
        ShapeImageSpec {
            num_shapes: 8,
            min_size: 12,
            max_size: 40,
            ..Self::large(greyscale)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_size == 0 || self.min_size > self.max_size || self.max_size > self.canvas_size
        {
            return Err(Error::validation(format!(
                "shape sizes must satisfy 0 < min_size <= max_size <= canvas_size \
                 (got min={}, max={}, canvas={})",
                self.min_size, self.max_size, self.canvas_size
            )));
        }
        if self.output_size == 0 || self.output_size > self.canvas_size {
            return Err(Error::validation(format!(
                "output_size must satisfy 0 < output_size <= canvas_size (got {} vs {})",
                self.output_size, self.canvas_size
            )));
        }
        if self.blur_kernel == 0 {
            return Err(Error::validation("blur_kernel must be >= 1"));
        }
        if self.shape_palette.is_empty() && self.num_shapes > 0 {
            return Err(Error::validation(
                "shape_palette must be nonempty when num_shapes > 0",
            ));
        }
        Ok(())
    }
}

/// An 8-bit image as produced by the pipeline (1 or 3 channel planes).
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    pub channels: usize,
    pub size: usize,
    /// Planar layout: channel-major, then row-major.
    pub pixels: Vec<u8>,
}

impl RasterImage {
    /// Decodes into the working range [-1, 1], shape (C, H, W).
    pub fn to_unit(&self) -> Array3<f32> {
        Array3::from_shape_vec(
            (self.channels, self.size, self.size),
            self.pixels.iter().map(|&v| pixel_to_unit(v)).collect(),
        )
        .expect("shape agrees with buffer")
    }
}

/// Packs images (all of equal geometry) into an (N, C, H, W) batch in
/// [-1, 1].
pub fn images_to_batch(images: &[RasterImage]) -> Result<Array4<f32>> {
    let first = images
        .first()
        .ok_or_else(|| Error::validation("cannot batch zero images"))?;
    let (c, s) = (first.channels, first.size);
    let mut out = Array4::<f32>::zeros((images.len(), c, s, s));
    for (i, img) in images.iter().enumerate() {
        if img.channels != c || img.size != s {
            return Err(Error::shape("mixed image geometry in batch"));
        }
        out.index_axis_mut(ndarray::Axis(0), i).assign(&img.to_unit());
    }
    Ok(out)
}

fn draw_one_shape(canvas: &mut Canvas, spec: &ShapeImageSpec, rng: &mut Rng) {
    let kind = spec.shape_palette[rng.gen_range(0..spec.shape_palette.len())];
    let side = canvas.size;
    let dim = |rng: &mut Rng| rng.gen_range(spec.min_size..=spec.max_size);
    let place = |rng: &mut Rng, extent: usize| rng.gen_range(0..=side.saturating_sub(extent));
    match kind {
        ShapeKind::Rectangle => {
            let w = dim(rng);
            let h = dim(rng);
            let x0 = place(rng, w);
            let y0 = place(rng, h);
            let color = [rng.gen(), rng.gen(), rng.gen()];
            canvas.fill_rect(x0, y0, w, h, color);
        }
        ShapeKind::Circle => {
            let d = dim(rng);
            let x0 = place(rng, d);
            let y0 = place(rng, d);
            let color = [rng.gen(), rng.gen(), rng.gen()];
            let r = d as f64 / 2.0;
            canvas.fill_ellipse(x0 as f64 + r, y0 as f64 + r, r, r, color);
        }
        ShapeKind::Ellipse => {
            let dw = dim(rng);
            let dh = dim(rng);
            let x0 = place(rng, dw);
            let y0 = place(rng, dh);
            let color = [rng.gen(), rng.gen(), rng.gen()];
            canvas.fill_ellipse(
                x0 as f64 + dw as f64 / 2.0,
                y0 as f64 + dh as f64 / 2.0,
                dw as f64 / 2.0,
                dh as f64 / 2.0,
                color,
            );
        }
        ShapeKind::Triangle => {
            let bw = dim(rng);
            let bh = dim(rng);
            let x0 = place(rng, bw) as f64;
            let y0 = place(rng, bh) as f64;
            let mut vert = [(0.0, 0.0); 3];
            for v in vert.iter_mut() {
                *v = (
                    x0 + rng.gen::<f64>() * bw as f64,
                    y0 + rng.gen::<f64>() * bh as f64,
                );
            }
            let color = [rng.gen(), rng.gen(), rng.gen()];
            canvas.fill_triangle(vert, color);
        }
    }
}

/// Renders one image. Pipeline order is fixed: draw `num_shapes` random
/// shapes, assign one random color to the background, box-blur, resize,
/// optional greyscale, quantize to 8 bits.
pub fn render_shape_image(spec: &ShapeImageSpec, seed: u64) -> Result<RasterImage> {
    spec.validate()?;
    let mut rng = stream_rng(seed, 0);
    let mut canvas = Canvas::new(spec.canvas_size);
    for _ in 0..spec.num_shapes {
        draw_one_shape(&mut canvas, spec, &mut rng);
    }
    let background = [rng.gen(), rng.gen(), rng.gen()];
    canvas.fill_background(background);

    let planes = canvas.to_f32_planes();
    let processed: Vec<Vec<f32>> = planes
        .iter()
        .map(|p| {
            let blurred = raster::box_blur(p, spec.canvas_size, spec.blur_kernel);
            raster::resize_bilinear(&blurred, spec.canvas_size, spec.output_size)
        })
        .collect();

    let (channels, data): (usize, Vec<f32>) = if spec.greyscale {
        (
            1,
            raster::to_grey(&processed[0], &processed[1], &processed[2]),
        )
    } else {
        (3, processed.concat())
    };
    let pixels = data
        .iter()
        .map(|&v| v.round().clamp(0.0, 255.0) as u8)
        .collect();
    Ok(RasterImage {
        channels,
        size: spec.output_size,
        pixels,
    })
}

/// Seed for image `index` of a corpus: a splitmix64 mix of the corpus seed
/// and the index, so neighboring indices get unrelated generators.
pub fn derive_image_seed(corpus_seed: u64, index: u64) -> u64 {
    let mut z = corpus_seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One named corpus variant with its share of the total.
#[derive(Debug, Clone)]
pub struct VariantSpec {
    pub name: String,
    pub spec: ShapeImageSpec,
    pub fraction: f64,
}

/// The default mix: equal halves of large and small overlapping shapes.
pub fn default_variants(greyscale: bool) -> Vec<VariantSpec> {
    vec![
        VariantSpec {
            name: "large".into(),
            spec: ShapeImageSpec::large(greyscale),
            fraction: 0.5,
        },
        VariantSpec {
            name: "small".into(),
            spec: ShapeImageSpec::small(greyscale),
            fraction: 0.5,
        },
    ]
}

/// Largest-remainder split of `total` into the given fractions.
pub fn plan_variant_counts(total: usize, fractions: &[f64]) -> Result<Vec<usize>> {
    if fractions.is_empty() {
        return Err(Error::validation("at least one variant required"));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::validation(format!(
            "variant fractions must sum to 1.0 +/- 1e-9 (got {sum})"
        )));
    }
    if fractions.iter().any(|&f| f < 0.0) {
        return Err(Error::validation("variant fractions must be nonnegative"));
    }
    let mut counts: Vec<usize> = fractions
        .iter()
        .map(|f| (f * total as f64).floor() as usize)
        .collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = fractions[a] * total as f64 - counts[a] as f64;
        let rb = fractions[b] * total as f64 - counts[b] as f64;
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for i in 0..total - assigned {
        counts[order[i % order.len()]] += 1;
    }
    Ok(counts)
}

/// Corpus description that fully determines its content.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    pub seed: u64,
    pub count: usize,
    pub mix: Vec<(String, f64)>,
    pub variant_counts: Vec<(String, usize)>,
    pub format: String,
    pub checksum: String,
}

impl CorpusManifest {
    pub fn to_text(&self) -> String {
        let mut map = BTreeMap::new();
        map.insert("version".to_string(), crate::FORMAT_VERSION.to_string());
        map.insert("seed".to_string(), self.seed.to_string());
        map.insert("count".to_string(), self.count.to_string());
        map.insert(
            "mix".to_string(),
            self.mix
                .iter()
                .map(|(n, f)| format!("{n}={f}"))
                .collect::<Vec<_>>()
                .join(","),
        );
        map.insert(
            "variant_counts".to_string(),
            self.variant_counts
                .iter()
                .map(|(n, c)| format!("{n}={c}"))
                .collect::<Vec<_>>()
                .join(","),
        );
        map.insert("format".to_string(), self.format.clone());
        map.insert("checksum".to_string(), self.checksum.clone());
        kv::format(&map)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let map = kv::parse(text)?;
        let view = kv::View::new(&map);
        let version: u32 = view
            .parse_as("version")?
            .ok_or_else(|| Error::format("manifest missing version"))?;
        if version != crate::FORMAT_VERSION {
            return Err(Error::format(format!("manifest version {version}")));
        }
        let pairs = |key: &str| -> Result<Vec<(String, String)>> {
            let raw = view
                .raw(key)
                .ok_or_else(|| Error::format(format!("manifest missing {key}")))?;
            if raw.is_empty() {
                return Ok(Vec::new());
            }
            raw.split(',')
                .map(|part| {
                    part.split_once('=')
                        .map(|(a, b)| (a.to_string(), b.to_string()))
                        .ok_or_else(|| Error::format(format!("bad {key} entry `{part}`")))
                })
                .collect()
        };
        let mix = pairs("mix")?
            .into_iter()
            .map(|(n, v)| {
                v.parse::<f64>()
                    .map(|f| (n, f))
                    .map_err(|_| Error::format("bad mix fraction"))
            })
            .collect::<Result<Vec<_>>>()?;
        let variant_counts = pairs("variant_counts")?
            .into_iter()
            .map(|(n, v)| {
                v.parse::<usize>()
                    .map(|c| (n, c))
                    .map_err(|_| Error::format("bad variant count"))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CorpusManifest {
            seed: view
                .parse_as("seed")?
                .ok_or_else(|| Error::format("manifest missing seed"))?,
            count: view
                .parse_as("count")?
                .ok_or_else(|| Error::format("manifest missing count"))?,
            mix,
            variant_counts,
            format: view
                .raw("format")
                .ok_or_else(|| Error::format("manifest missing format"))?
                .to_string(),
            checksum: view
                .raw("checksum")
                .ok_or_else(|| Error::format("manifest missing checksum"))?
                .to_string(),
        })
    }
}

fn format_descriptor(variants: &[VariantSpec]) -> Result<String> {
    let first = &variants[0];
    for v in variants {
        if v.spec.output_size != first.spec.output_size || v.spec.greyscale != first.spec.greyscale
        {
            return Err(Error::validation(
                "all variants must share output size and color mode",
            ));
        }
    }
    Ok(format!(
        "{}8:{}",
        if first.spec.greyscale { "grey" } else { "rgb" },
        first.spec.output_size
    ))
}

/// Generates the full corpus in memory. Images come back in index order;
/// the checksum is SHA-256 over their pixel bytes in that order.
pub fn generate_corpus(
    variants: &[VariantSpec],
    total: usize,
    seed: u64,
) -> Result<(Vec<RasterImage>, CorpusManifest)> {
    for v in variants {
        v.spec.validate()?;
    }
    let fractions: Vec<f64> = variants.iter().map(|v| v.fraction).collect();
    let counts = plan_variant_counts(total, &fractions)?;
    let format = format_descriptor(variants)?;

    // image index -> variant, in contiguous blocks following variant order
    let mut owner = Vec::with_capacity(total);
    for (vi, &c) in counts.iter().enumerate() {
        owner.extend(std::iter::repeat(vi).take(c));
    }
    let images: Vec<RasterImage> = (0..total)
        .into_par_iter()
        .map(|i| {
            let spec = &variants[owner[i]].spec;
            render_shape_image(spec, derive_image_seed(seed, i as u64))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut hasher = Sha256::new();
    for img in &images {
        hasher.update(&img.pixels);
    }
    let checksum = hex_string(&hasher.finalize());

    let manifest = CorpusManifest {
        seed,
        count: total,
        mix: variants
            .iter()
            .map(|v| (v.name.clone(), v.fraction))
            .collect(),
        variant_counts: variants
            .iter()
            .zip(counts.iter())
            .map(|(v, &c)| (v.name.clone(), c))
            .collect(),
        format,
        checksum,
    };
    Ok((images, manifest))
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub const MANIFEST_FILE: &str = "manifest.txt";

/// Generates and writes the corpus to `out_dir` as PNG files plus a
/// manifest.
pub fn build_corpus(
    variants: &[VariantSpec],
    total: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<CorpusManifest> {
    let (images, manifest) = generate_corpus(variants, total, seed)?;
    std::fs::create_dir_all(out_dir)?;
    let mut variant_of = Vec::with_capacity(total);
    for (name, count) in &manifest.variant_counts {
        variant_of.extend(std::iter::repeat(name.clone()).take(*count));
    }
    for (i, img) in images.iter().enumerate() {
        let path = out_dir.join(format!("img_{i:06}_{}.png", variant_of[i]));
        write_png(&path, img)?;
    }
    std::fs::write(out_dir.join(MANIFEST_FILE), manifest.to_text())?;
    Ok(manifest)
}

fn write_png(path: &Path, img: &RasterImage) -> Result<()> {
    let size = img.size as u32;
    match img.channels {
        1 => {
            let buf = image::GrayImage::from_raw(size, size, img.pixels.clone())
                .ok_or_else(|| Error::format("grey buffer size mismatch"))?;
            buf.save(path)
                .map_err(|e| Error::format(format!("png write: {e}")))?;
        }
        3 => {
            // planar -> interleaved
            let hw = img.size * img.size;
            let mut inter = Vec::with_capacity(hw * 3);
            for i in 0..hw {
                inter.push(img.pixels[i]);
                inter.push(img.pixels[hw + i]);
                inter.push(img.pixels[2 * hw + i]);
            }
            let buf = image::RgbImage::from_raw(size, size, inter)
                .ok_or_else(|| Error::format("rgb buffer size mismatch"))?;
            buf.save(path)
                .map_err(|e| Error::format(format!("png write: {e}")))?;
        }
        c => return Err(Error::format(format!("unsupported channel count {c}"))),
    }
    Ok(())
}

/// Loads a corpus directory written by [`build_corpus`]; images return in
/// index order and the recomputed checksum is verified against the
/// manifest.
pub fn load_corpus(dir: &Path) -> Result<(Vec<RasterImage>, CorpusManifest)> {
    let manifest = CorpusManifest::parse(&std::fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    let mut names: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".png"))
        .collect();
    names.sort();
    if names.len() != manifest.count {
        return Err(Error::format(format!(
            "corpus has {} images, manifest says {}",
            names.len(),
            manifest.count
        )));
    }
    let grey = manifest.format.starts_with("grey");
    let mut images = Vec::with_capacity(names.len());
    let mut hasher = Sha256::new();
    for name in &names {
        let decoded = image::open(dir.join(name))
            .map_err(|e| Error::format(format!("png read {name}: {e}")))?;
        let img = if grey {
            let g = decoded.into_luma8();
            RasterImage {
                channels: 1,
                size: g.width() as usize,
                pixels: g.into_raw(),
            }
        } else {
            let rgb = decoded.into_rgb8();
            let size = rgb.width() as usize;
            let raw = rgb.into_raw();
            let hw = size * size;
            let mut planar = vec![0u8; hw * 3];
            for i in 0..hw {
                planar[i] = raw[3 * i];
                planar[hw + i] = raw[3 * i + 1];
                planar[2 * hw + i] = raw[3 * i + 2];
            }
            RasterImage {
                channels: 3,
                size,
                pixels: planar,
            }
        };
        hasher.update(&img.pixels);
        images.push(img);
    }
    let checksum = hex_string(&hasher.finalize());
    if checksum != manifest.checksum {
        return Err(Error::format(format!(
            "corpus checksum {checksum} does not match manifest {}",
            manifest.checksum
        )));
    }
    Ok((images, manifest))
}
