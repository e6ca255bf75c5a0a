//! Label schema, dataset types, annotation ingestion and the procedural
//! toy dataset.
//!
//! Labels are hierarchical: a tag names an attribute category ("mouth"),
//! and exactly one attribute under each tag is active per image. The flat
//! binary vector `l` concatenates one-hot blocks per tag in schema order.

use crate::error::{Error, Result};
use ndarray::{Array1, Array3, Array4, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::path::Path;

/// One image as `[C, H, W]` with values in `[-1, 1]`.
pub type Image = Array3<f64>;
/// A batch of images as `[B, C, H, W]`.
pub type ImageBatch = Array4<f64>;

pub fn stack_images(images: &[&Image]) -> ImageBatch {
    assert!(!images.is_empty());
    let (c, h, w) = images[0].dim();
    let mut out = Array4::zeros((images.len(), c, h, w));
    for (i, img) in images.iter().enumerate() {
        out.index_axis_mut(Axis(0), i).assign(img);
    }
    out
}

/// Hierarchical (tag, attribute) label space.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TagSchema {
    tags: Vec<String>,
    attrs: Vec<Vec<String>>,
}

impl TagSchema {
    pub fn new(spec: Vec<(String, Vec<String>)>) -> Result<Self> {
        if spec.is_empty() {
            return Err(Error::schema("schema needs at least one tag"));
        }
        let mut tags = Vec::new();
        let mut attrs = Vec::new();
        for (tag, list) in spec {
            if list.len() < 2 {
                return Err(Error::schema(format!("tag '{tag}' needs at least 2 attributes")));
            }
            let mut seen = std::collections::HashSet::new();
            for a in &list {
                if !seen.insert(a.clone()) {
                    return Err(Error::schema(format!("duplicate attribute '{a}' under tag '{tag}'")));
                }
            }
            if tags.contains(&tag) {
                return Err(Error::schema(format!("duplicate tag '{tag}'")));
            }
            tags.push(tag);
            attrs.push(list);
        }
        Ok(TagSchema { tags, attrs })
    }

    /// Default desk-scale schema: mouth in {flat, curved}, hue in {cool, warm}.
    pub fn toy() -> Self {
        TagSchema::new(vec![
            ("mouth".into(), vec!["flat".into(), "curved".into()]),
            ("hue".into(), vec!["cool".into(), "warm".into()]),
        ])
        .expect("toy schema is valid")
    }

    /// The three-tag evaluation preset (smile / young / male, two-valued each).
    pub fn celeba3() -> Self {
        TagSchema::new(vec![
            ("smile".into(), vec!["no_smile".into(), "smile".into()]),
            ("young".into(), vec!["old".into(), "young".into()]),
            ("male".into(), vec!["female".into(), "male".into()]),
        ])
        .expect("preset schema is valid")
    }

    pub fn num_tags(&self) -> usize {
        self.tags.len()
    }

    /// Total attribute count `n` (the length of the flat label vector).
    pub fn num_attrs_total(&self) -> usize {
        self.attrs.iter().map(|a| a.len()).sum()
    }

    pub fn tag_name(&self, tag: usize) -> &str {
        &self.tags[tag]
    }

    pub fn attr_name(&self, tag: usize, attr: usize) -> &str {
        &self.attrs[tag][attr]
    }

    pub fn attr_count(&self, tag: usize) -> usize {
        self.attrs[tag].len()
    }

    pub fn tag_index(&self, name: &str) -> Result<usize> {
        self.tags
            .iter()
            .position(|t| t.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::schema(format!("unknown tag '{name}'")))
    }

    pub fn attr_index(&self, tag: usize, name: &str) -> Result<usize> {
        self.check_tag(tag)?;
        self.attrs[tag]
            .iter()
            .position(|a| a.eq_ignore_ascii_case(name))
            .ok_or_else(|| {
                Error::schema(format!("unknown attribute '{name}' under tag '{}'", self.tags[tag]))
            })
    }

    pub fn check_tag(&self, tag: usize) -> Result<()> {
        if tag >= self.tags.len() {
            return Err(Error::schema(format!("tag index {tag} out of range")));
        }
        Ok(())
    }

    pub fn check_pair(&self, tag: usize, attr: usize) -> Result<()> {
        self.check_tag(tag)?;
        if attr >= self.attrs[tag].len() {
            return Err(Error::schema(format!(
                "attribute index {attr} out of range for tag '{}'",
                self.tags[tag]
            )));
        }
        Ok(())
    }

    /// Offset of `(tag, attr)` inside the flat label vector.
    pub fn flat_index(&self, tag: usize, attr: usize) -> usize {
        self.attrs[..tag].iter().map(|a| a.len()).sum::<usize>() + attr
    }

    /// All `(tag, attr)` pairs in flat order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (t, list) in self.attrs.iter().enumerate() {
            for a in 0..list.len() {
                out.push((t, a));
            }
        }
        out
    }

    /// Serialize as flat key-value text, one tag per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (t, list) in self.tags.iter().zip(&self.attrs) {
            s.push_str(&format!("{t} = {}\n", list.join(", ")));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut spec = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (tag, rest) = line
                .split_once('=')
                .ok_or_else(|| Error::schema(format!("schema line missing '=': {line}")))?;
            let attrs: Vec<String> =
                rest.split(',').map(|a| a.trim().to_string()).filter(|a| !a.is_empty()).collect();
            spec.push((tag.trim().to_string(), attrs));
        }
        TagSchema::new(spec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// An image with one active attribute per tag.
#[derive(Debug, Clone)]
pub struct LabeledImage {
    pub image: Image,
    /// Active attribute index per tag, in schema tag order.
    pub attrs: Vec<usize>,
}

impl LabeledImage {
    /// Flat binary label vector (one-hot per tag block).
    pub fn label_vector(&self, schema: &TagSchema) -> Array1<f64> {
        let mut l = Array1::zeros(schema.num_attrs_total());
        for (tag, &attr) in self.attrs.iter().enumerate() {
            l[schema.flat_index(tag, attr)] = 1.0;
        }
        l
    }
}

/// Label vector for an edit target: the source labels with `tag` flipped to
/// `target_attr`.
pub fn edited_label_vector(
    schema: &TagSchema,
    source: &LabeledImage,
    tag: usize,
    target_attr: usize,
) -> Array1<f64> {
    let mut l = source.label_vector(schema);
    l[schema.flat_index(tag, source.attrs[tag])] = 0.0;
    l[schema.flat_index(tag, target_attr)] = 1.0;
    l
}

/// How the target style code is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidedMode {
    /// Style sampled from noise through the mapper.
    Latent,
    /// Style extracted from a reference image.
    Reference,
}

/// A single requested attribute edit.
#[derive(Debug, Clone)]
pub struct EditRequest {
    pub tag: usize,
    pub source_attr: usize,
    pub target_attr: usize,
    pub mode: GuidedMode,
    pub reference: Option<LabeledImage>,
}

impl EditRequest {
    pub fn validate(&self, schema: &TagSchema) -> Result<()> {
        schema.check_pair(self.tag, self.source_attr)?;
        schema.check_pair(self.tag, self.target_attr)?;
        if self.mode == GuidedMode::Reference {
            match &self.reference {
                None => {
                    return Err(Error::invalid(
                        "reference-guided edit requires a reference image",
                    ))
                }
                Some(r) => {
                    if r.attrs[self.tag] != self.target_attr {
                        return Err(Error::invalid(format!(
                            "reference image carries attribute '{}' but the edit targets '{}'",
                            schema.attr_name(self.tag, r.attrs[self.tag]),
                            schema.attr_name(self.tag, self.target_attr)
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Synthetic toy dataset
// ---------------------------------------------------------------------------

pub const TOY_SIZE: usize = 32;

fn smoothstep(edge0: f64, edge1: f64, x: f64) -> f64 {
    let t = ((x - edge0) / (edge1 - edge0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Deterministic per-item RNG stream derived from a base seed.
pub fn item_rng(seed: u64, index: u64) -> ChaCha8Rng {
    // splitmix64 on the combined key keeps streams independent
    let mut z = seed ^ index.wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

/// Render one toy face: oval head, two eye dots, a mouth stroke whose
/// curvature encodes the mouth attribute, and a background tint encoding the
/// hue attribute. Jitter (position, scale, tint) comes from `rng`.
fn render_toy_face(mouth_curved: bool, warm: bool, rng: &mut ChaCha8Rng) -> Image {
    let n = TOY_SIZE as f64;
    let cx = n / 2.0 + rng.gen_range(-1.5..1.5);
    let cy = n / 2.0 + rng.gen_range(-1.5..1.5);
    let scale: f64 = rng.gen_range(0.92..1.08);
    let tint: f64 = rng.gen_range(-0.08..0.08);

    let bg: [f64; 3] = if warm {
        [0.55 + tint, 0.10 + tint, -0.45 + tint]
    } else {
        [-0.45 + tint, 0.05 + tint, 0.55 + tint]
    };
    let skin = [0.55, 0.25, -0.05];
    let dark = [-0.75, -0.7, -0.65];

    let rx = 9.5 * scale;
    let ry = 11.5 * scale;
    let eye_dx = 3.6 * scale;
    let eye_dy = 3.4 * scale;
    let eye_r = 1.4 * scale;
    let mouth_y = cy + 4.6 * scale;
    let mouth_w = 5.0 * scale;
    let curve = if mouth_curved { 4.2 * scale } else { 0.0 };

    let mut img = Array3::zeros((3, TOY_SIZE, TOY_SIZE));
    for i in 0..TOY_SIZE {
        for j in 0..TOY_SIZE {
            let y = i as f64 + 0.5;
            let x = j as f64 + 0.5;

            let mut px = bg;

            // head
            let d_oval = (((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2)).sqrt();
            let head = smoothstep(1.05, 0.95, d_oval);
            for ch in 0..3 {
                px[ch] = px[ch] * (1.0 - head) + skin[ch] * head;
            }

            // eyes
            for sx in [-1.0, 1.0] {
                let ex = cx + sx * eye_dx;
                let ey = cy - eye_dy;
                let d = ((x - ex).powi(2) + (y - ey).powi(2)).sqrt();
                let dot = smoothstep(eye_r + 0.6, eye_r - 0.4, d);
                for ch in 0..3 {
                    px[ch] = px[ch] * (1.0 - dot) + dark[ch] * dot;
                }
            }

            // mouth stroke: flat line or an upward arc
            let dx = x - cx;
            if dx.abs() <= mouth_w + 1.0 {
                let u = (dx / mouth_w).clamp(-1.0, 1.0);
                let arc_y = mouth_y + curve * (u * u - 0.5);
                let d = (y - arc_y).abs();
                let lateral = smoothstep(mouth_w + 0.8, mouth_w - 0.4, dx.abs());
                let stroke = smoothstep(1.3, 0.5, d) * lateral;
                for ch in 0..3 {
                    px[ch] = px[ch] * (1.0 - stroke) + dark[ch] * stroke;
                }
            }

            for ch in 0..3 {
                img[(ch, i, j)] = px[ch].clamp(-1.0, 1.0);
            }
        }
    }
    img
}

/// Generate `count` stratified toy faces. Attribute combinations cycle so
/// every attribute appears in `count/2 (+/- 1)` images; all jitter derives
/// from `seed`.
pub fn synth_toy_dataset(seed: u64, count: usize, schema: &TagSchema) -> Result<Vec<LabeledImage>> {
    if count == 0 {
        return Err(Error::invalid("toy dataset needs count >= 1"));
    }
    if schema.num_tags() != 2 || schema.attr_count(0) != 2 || schema.attr_count(1) != 2 {
        return Err(Error::schema(
            "the toy generator renders a 2-tag x 2-attribute schema (mouth, hue)",
        ));
    }
    let mut out = Vec::with_capacity(count);
    for idx in 0..count {
        let combo = idx % 4;
        let mouth_attr = combo & 1;
        let hue_attr = (combo >> 1) & 1;
        let mut rng = item_rng(seed, idx as u64);
        let image = render_toy_face(mouth_attr == 1, hue_attr == 1, &mut rng);
        out.push(LabeledImage { image, attrs: vec![mouth_attr, hue_attr] });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Image file IO
// ---------------------------------------------------------------------------

/// Decode a PNG/JPEG file, bilinear-resize to `size` and scale to `[-1, 1]`.
pub fn load_image(path: &Path, size: usize) -> Result<Image> {
    let img = image::open(path)?;
    let img = img.resize_exact(size as u32, size as u32, image::imageops::FilterType::Triangle);
    let rgb = img.to_rgb8();
    let mut out = Array3::zeros((3, size, size));
    for (x, y, p) in rgb.enumerate_pixels() {
        for ch in 0..3 {
            out[(ch, y as usize, x as usize)] = p.0[ch] as f64 / 127.5 - 1.0;
        }
    }
    Ok(out)
}

/// Encode an image tensor to 8-bit RGB for writing as PNG.
pub fn image_to_rgb8(img: &Image) -> image::RgbImage {
    let (_, h, w) = img.dim();
    let mut out = image::RgbImage::new(w as u32, h as u32);
    for (x, y, p) in out.enumerate_pixels_mut() {
        for ch in 0..3 {
            let v = (img[(ch, y as usize, x as usize)].clamp(-1.0, 1.0) + 1.0) * 127.5;
            p.0[ch] = v.round() as u8;
        }
    }
    out
}

pub fn save_image(img: &Image, path: &Path) -> Result<()> {
    image_to_rgb8(img).save(path)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Annotation ingestion (CelebA-style +/-1 CSV)
// ---------------------------------------------------------------------------

/// Result of annotation ingestion: accepted images plus the count of rows
/// rejected for contradictory labels.
pub struct AnnotatedSet {
    pub images: Vec<LabeledImage>,
    pub rejected: usize,
}

enum ColumnRole {
    /// Two-valued tag column: +1 selects attribute 1, -1 selects attribute 0.
    Tag(usize),
    /// Single-attribute column: +1 marks this attribute active.
    Attr(usize, usize),
}

fn resolve_column(schema: &TagSchema, name: &str) -> Result<ColumnRole> {
    if let Ok(tag) = schema.tag_index(name) {
        if schema.attr_count(tag) == 2 {
            return Ok(ColumnRole::Tag(tag));
        }
        return Err(Error::schema(format!(
            "column '{name}' names a tag with more than 2 attributes; use attribute columns"
        )));
    }
    for (tag, attr) in schema.pairs() {
        if schema.attr_name(tag, attr).eq_ignore_ascii_case(name) {
            return Ok(ColumnRole::Attr(tag, attr));
        }
    }
    Err(Error::schema(format!("annotation column '{name}' matches no tag or attribute")))
}

/// Parse a header + rows of `{filename, +/-1 per column}` annotations and
/// decode the referenced images. Rows whose labels are contradictory under
/// the schema (conflicting or missing per-tag assignment) are rejected and
/// counted, not fatal.
pub fn load_annotations(
    image_dir: &Path,
    annotation_file: &Path,
    schema: &TagSchema,
    size: usize,
) -> Result<AnnotatedSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(annotation_file)?;
    let headers = reader.headers()?.clone();
    if headers.len() < 2 {
        return Err(Error::schema("annotation file needs a filename column plus attribute columns"));
    }
    let roles: Vec<ColumnRole> = headers
        .iter()
        .skip(1)
        .map(|h| resolve_column(schema, h))
        .collect::<Result<_>>()?;

    let mut images = Vec::new();
    let mut rejected = 0usize;
    for record in reader.records() {
        let record = record?;
        let fname = record.get(0).unwrap_or_default().to_string();
        let mut assign: Vec<Option<usize>> = vec![None; schema.num_tags()];
        let mut contradictory = false;
        for (role, raw) in roles.iter().zip(record.iter().skip(1)) {
            let v: i32 = match raw.trim_start_matches('+').parse() {
                Ok(v) if v == 1 || v == -1 => v,
                _ => {
                    return Err(Error::schema(format!(
                        "annotation value '{raw}' in row '{fname}' is not +/-1"
                    )))
                }
            };
            match role {
                ColumnRole::Tag(tag) => {
                    let attr = if v == 1 { 1 } else { 0 };
                    match assign[*tag] {
                        Some(prev) if prev != attr => contradictory = true,
                        _ => assign[*tag] = Some(attr),
                    }
                }
                ColumnRole::Attr(tag, attr) => {
                    if v == 1 {
                        match assign[*tag] {
                            Some(prev) if prev != *attr => contradictory = true,
                            _ => assign[*tag] = Some(*attr),
                        }
                    }
                }
            }
        }
        if contradictory || assign.iter().any(Option::is_none) {
            rejected += 1;
            continue;
        }
        let image = load_image(&image_dir.join(&fname), size)?;
        images.push(LabeledImage { image, attrs: assign.into_iter().map(Option::unwrap).collect() });
    }
    Ok(AnnotatedSet { images, rejected })
}

/// Write a dataset as PNG files plus a CelebA-style annotation CSV and a
/// schema file; the exact format [`load_annotations`] ingests.
pub fn write_dataset(dir: &Path, images: &[LabeledImage], schema: &TagSchema) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    schema.save(&dir.join("schema.txt"))?;
    let mut wtr = csv::Writer::from_path(dir.join("annotations.csv"))?;
    let all_two = (0..schema.num_tags()).all(|t| schema.attr_count(t) == 2);
    let mut header = vec!["filename".to_string()];
    if all_two {
        header.extend((0..schema.num_tags()).map(|t| schema.tag_name(t).to_string()));
    } else {
        header.extend(schema.pairs().iter().map(|&(t, a)| schema.attr_name(t, a).to_string()));
    }
    wtr.write_record(&header)?;
    for (idx, item) in images.iter().enumerate() {
        let fname = format!("img_{idx:05}.png");
        save_image(&item.image, &dir.join(&fname))?;
        let mut row = vec![fname];
        if all_two {
            for tag in 0..schema.num_tags() {
                row.push(if item.attrs[tag] == 1 { "1".into() } else { "-1".into() });
            }
        } else {
            for (t, a) in schema.pairs() {
                row.push(if item.attrs[t] == a { "1".into() } else { "-1".into() });
            }
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Edit sampling
// ---------------------------------------------------------------------------

/// Sample a batch of edit requests: uniform tag per item, then a uniform
/// target attribute different from the current one. In reference mode each
/// request is paired with a uniformly sampled image carrying the target
/// attribute.
pub fn sample_edit_batch(
    dataset: &[LabeledImage],
    schema: &TagSchema,
    batch_size: usize,
    mode: GuidedMode,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(LabeledImage, EditRequest)>> {
    if dataset.is_empty() {
        return Err(Error::invalid("cannot sample edits from an empty dataset"));
    }
    // index images per (tag, attr) once for reference pairing
    let mut by_attr: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    if mode == GuidedMode::Reference {
        for (i, item) in dataset.iter().enumerate() {
            for (tag, &attr) in item.attrs.iter().enumerate() {
                by_attr.entry((tag, attr)).or_default().push(i);
            }
        }
    }
    let mut out = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let idx = rng.gen_range(0..dataset.len());
        let item = dataset[idx].clone();
        let tag = rng.gen_range(0..schema.num_tags());
        let source = item.attrs[tag];
        let n_attrs = schema.attr_count(tag);
        let mut target = rng.gen_range(0..n_attrs - 1);
        if target >= source {
            target += 1;
        }
        let reference = match mode {
            GuidedMode::Latent => None,
            GuidedMode::Reference => {
                let pool = by_attr.get(&(tag, target)).filter(|p| !p.is_empty()).ok_or_else(|| {
                    Error::Sampling(format!(
                        "no reference image carries attribute '{}' of tag '{}'",
                        schema.attr_name(tag, target),
                        schema.tag_name(tag)
                    ))
                })?;
                Some(dataset[pool[rng.gen_range(0..pool.len())]].clone())
            }
        };
        out.push((
            item,
            EditRequest { tag, source_attr: source, target_attr: target, mode, reference },
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn toy_dataset_is_seed_deterministic() {
        let schema = TagSchema::toy();
        let a = synth_toy_dataset(11, 16, &schema).unwrap();
        let b = synth_toy_dataset(11, 16, &schema).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.attrs, y.attrs);
            let xb: Vec<u64> = x.image.iter().map(|v| v.to_bits()).collect();
            let yb: Vec<u64> = y.image.iter().map(|v| v.to_bits()).collect();
            assert_eq!(xb, yb);
        }
        let c = synth_toy_dataset(12, 16, &schema).unwrap();
        assert!(a[0].image != c[0].image);
    }

    #[test]
    fn toy_dataset_is_balanced_and_in_range() {
        let schema = TagSchema::toy();
        let data = synth_toy_dataset(3, 101, &schema).unwrap();
        for tag in 0..2 {
            for attr in 0..2 {
                let count = data.iter().filter(|d| d.attrs[tag] == attr).count();
                let half = 101 / 2;
                assert!(
                    count >= half && count <= half + 1,
                    "tag {tag} attr {attr}: {count} of 101"
                );
            }
        }
        for item in &data {
            assert!(item.image.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn label_vector_round_trip() {
        let schema = TagSchema::toy();
        let item = LabeledImage { image: Array3::zeros((3, 4, 4)), attrs: vec![1, 0] };
        let l = item.label_vector(&schema);
        assert_eq!(l.as_slice().unwrap(), &[0.0, 1.0, 1.0, 0.0]);
        // reconstruct attrs from l
        let mut attrs = Vec::new();
        for tag in 0..schema.num_tags() {
            let block: Vec<f64> =
                (0..schema.attr_count(tag)).map(|a| l[schema.flat_index(tag, a)]).collect();
            assert_eq!(block.iter().sum::<f64>(), 1.0, "one active attribute per tag");
            attrs.push(block.iter().position(|&v| v == 1.0).unwrap());
        }
        assert_eq!(attrs, item.attrs);
    }

    #[test]
    fn edited_label_flips_only_the_requested_tag() {
        let schema = TagSchema::toy();
        let item = LabeledImage { image: Array3::zeros((3, 4, 4)), attrs: vec![0, 1] };
        let l = edited_label_vector(&schema, &item, 0, 1);
        assert_eq!(l.as_slice().unwrap(), &[0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn annotations_round_trip_through_files() {
        let dir = tempdir().unwrap();
        let schema = TagSchema::toy();
        let data = synth_toy_dataset(5, 8, &schema).unwrap();
        write_dataset(dir.path(), &data, &schema).unwrap();
        let loaded = load_annotations(
            dir.path(),
            &dir.path().join("annotations.csv"),
            &schema,
            TOY_SIZE,
        )
        .unwrap();
        assert_eq!(loaded.rejected, 0);
        assert_eq!(loaded.images.len(), 8);
        for (a, b) in data.iter().zip(&loaded.images) {
            assert_eq!(a.attrs, b.attrs);
            // 8-bit quantization bounds the pixel error
            let err = a
                .image
                .iter()
                .zip(b.image.iter())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0f64, f64::max);
            assert!(err <= 1.0 / 127.5 + 1e-9, "quantization error {err}");
        }
    }

    #[test]
    fn tag_column_mapping_and_contradiction_count() {
        let dir = tempdir().unwrap();
        let schema =
            TagSchema::new(vec![("smile".into(), vec!["no_smile".into(), "smile".into()])])
                .unwrap();
        // one real image for every row to reference
        let img = Array3::zeros((3, 8, 8));
        save_image(&img, &dir.path().join("img.png")).unwrap();
        // attribute-name columns for the same tag; row 2 sets both -> contradiction
        std::fs::write(
            dir.path().join("ann.csv"),
            "filename,no_smile,Smile\nimg.png,-1,1\nimg.png,1,1\nimg.png,1,-1\n",
        )
        .unwrap();
        let set = load_annotations(dir.path(), &dir.path().join("ann.csv"), &schema, 8).unwrap();
        assert_eq!(set.rejected, 1);
        assert_eq!(set.images.len(), 2);
        assert_eq!(set.images[0].attrs, vec![1]); // Smile=+1 selects attribute 1
        assert_eq!(set.images[1].attrs, vec![0]);

        // tag-named column form
        std::fs::write(dir.path().join("ann2.csv"), "filename,Smile\nimg.png,1\n").unwrap();
        let set2 = load_annotations(dir.path(), &dir.path().join("ann2.csv"), &schema, 8).unwrap();
        assert_eq!(set2.images[0].attrs, vec![1]);
    }

    #[test]
    fn unknown_column_is_a_schema_error() {
        let dir = tempdir().unwrap();
        let schema = TagSchema::toy();
        std::fs::write(dir.path().join("ann.csv"), "filename,eyebrows\nimg.png,1\n").unwrap();
        let err = load_annotations(dir.path(), &dir.path().join("ann.csv"), &schema, 8);
        assert!(matches!(err, Err(Error::Schema(_))));
    }

    #[test]
    fn missing_annotation_file_is_io_error() {
        let schema = TagSchema::toy();
        let err = load_annotations(Path::new("/nonexistent"), Path::new("/nonexistent/a.csv"), &schema, 8);
        assert!(err.is_err());
    }

    #[test]
    fn edit_sampling_contracts() {
        let schema = TagSchema::toy();
        let data = synth_toy_dataset(7, 64, &schema).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch =
            sample_edit_batch(&data, &schema, 512, GuidedMode::Reference, &mut rng).unwrap();
        for (item, req) in &batch {
            assert_ne!(req.source_attr, req.target_attr, "edits never target the current attribute");
            assert_eq!(item.attrs[req.tag], req.source_attr);
            let r = req.reference.as_ref().expect("reference mode pairs a reference");
            assert_eq!(r.attrs[req.tag], req.target_attr);
            req.validate(&schema).unwrap();
        }
    }

    #[test]
    fn edit_sampling_tag_frequency_is_uniform() {
        let schema = TagSchema::toy();
        let data = synth_toy_dataset(9, 32, &schema).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 10_000usize;
        let batch = sample_edit_batch(&data, &schema, n, GuidedMode::Latent, &mut rng).unwrap();
        let count_tag0 = batch.iter().filter(|(_, r)| r.tag == 0).count() as f64;
        let mean = n as f64 * 0.5;
        let sigma = (n as f64 * 0.25).sqrt();
        assert!(
            (count_tag0 - mean).abs() <= 3.0 * sigma,
            "tag-0 draws {count_tag0} outside 3 sigma of {mean}"
        );
    }

    #[test]
    fn reference_sampling_names_missing_attribute() {
        let schema = TagSchema::toy();
        // all images carry mouth=flat, hue=cool: curved/warm have no references
        let img = Array3::zeros((3, 4, 4));
        let data = vec![LabeledImage { image: img, attrs: vec![0, 0] }; 4];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let err = sample_edit_batch(&data, &schema, 16, GuidedMode::Reference, &mut rng);
        match err {
            Err(Error::Sampling(msg)) => {
                assert!(msg.contains("curved") || msg.contains("warm"), "message: {msg}")
            }
            other => panic!("expected sampling error, got {other:?}"),
        }
    }

    #[test]
    fn schema_text_round_trip_and_validation() {
        let schema = TagSchema::celeba3();
        let text = schema.to_text();
        let back = TagSchema::from_text(&text).unwrap();
        assert_eq!(schema, back);
        assert_eq!(schema.num_attrs_total(), 6);
        assert!(TagSchema::new(vec![("solo".into(), vec!["only".into()])]).is_err());
        assert!(TagSchema::new(vec![("t".into(), vec!["a".into(), "a".into()])]).is_err());
    }
}
