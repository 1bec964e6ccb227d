//! Pascal-VOC style datasets and the synthetic planted-rectangle generator.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::geometry::BoundingBox;

pub const VOC_CATEGORIES: [&str; 20] = [
    "aeroplane",
    "bicycle",
    "bird",
    "boat",
    "bottle",
    "bus",
    "car",
    "cat",
    "chair",
    "cow",
    "diningtable",
    "dog",
    "horse",
    "motorbike",
    "person",
    "pottedplant",
    "sheep",
    "sofa",
    "train",
    "tvmonitor",
];

pub const SYNTHETIC_CATEGORY: &str = "block";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("malformed annotation: {0}")]
    MalformedAnnotation(String),
    #[error("box {bbox} of `{category}` lies outside the {width}x{height} image")]
    BoxOutOfBounds {
        category: String,
        bbox: BoundingBox,
        width: u32,
        height: u32,
    },
    #[error("split file not found: {0}")]
    MissingSplitFile(PathBuf),
    #[error("image `{id}` is missing its {what}")]
    MissingImage { id: String, what: String },
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> DataError {
    DataError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectAnnotation {
    pub category: String,
    pub bbox: BoundingBox,
    pub difficult: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedImage {
    pub id: String,
    pub path: PathBuf,
    pub width: u32,
    pub height: u32,
    pub objects: Vec<ObjectAnnotation>,
}

impl AnnotatedImage {
    pub fn boxes_for(&self, category: &str) -> Vec<BoundingBox> {
        self.objects
            .iter()
            .filter(|o| o.category == category)
            .map(|o| o.bbox)
            .collect()
    }

    pub fn categories(&self) -> Vec<&str> {
        let mut c: Vec<&str> = self.objects.iter().map(|o| o.category.as_str()).collect();
        c.sort_unstable();
        c.dedup();
        c
    }
}

/// An annotation together with its decoded raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub annotation: AnnotatedImage,
    pub image: RgbImage,
}

fn child<'a, 'i>(node: roxmltree::Node<'a, 'i>, name: &str) -> Option<roxmltree::Node<'a, 'i>> {
    node.children().find(|c| c.has_tag_name(name))
}

fn text_of(node: roxmltree::Node, name: &str, context: &str) -> Result<String, DataError> {
    child(node, name)
        .and_then(|n| n.text())
        .map(|t| t.trim().to_string())
        .ok_or_else(|| DataError::MalformedAnnotation(format!("missing <{name}> in <{context}>")))
}

fn number_of(node: roxmltree::Node, name: &str, context: &str) -> Result<f64, DataError> {
    let t = text_of(node, name, context)?;
    t.parse::<f64>()
        .map_err(|_| DataError::MalformedAnnotation(format!("<{name}> in <{context}> is not a number: `{t}`")))
}

/// Parses one VOC XML annotation. Pixel coordinates are converted from
/// 1-based inclusive to 0-based half-open.
pub fn parse_voc_annotation(xml: &str) -> Result<AnnotatedImage, DataError> {
    let doc = roxmltree::Document::parse(xml).map_err(|e| DataError::MalformedAnnotation(e.to_string()))?;
    let root = doc.root_element();
    if !root.has_tag_name("annotation") {
        return Err(DataError::MalformedAnnotation(format!(
            "root element is <{}>, expected <annotation>",
            root.tag_name().name()
        )));
    }
    let filename = child(root, "filename").and_then(|n| n.text()).unwrap_or("").trim().to_string();
    let size = child(root, "size").ok_or_else(|| DataError::MalformedAnnotation("missing <size>".into()))?;
    let width = number_of(size, "width", "size")?;
    let height = number_of(size, "height", "size")?;
    if width < 1.0 || height < 1.0 {
        return Err(DataError::MalformedAnnotation(format!("image size {width}x{height}")));
    }
    let (width, height) = (width as u32, height as u32);

    let mut objects = Vec::new();
    for obj in root.children().filter(|c| c.has_tag_name("object")) {
        let category = text_of(obj, "name", "object")?;
        let difficult = match child(obj, "difficult").and_then(|n| n.text()) {
            Some(t) => t.trim() == "1",
            None => false,
        };
        let bnd = child(obj, "bndbox")
            .ok_or_else(|| DataError::MalformedAnnotation(format!("object `{category}` has no <bndbox>")))?;
        let xmin = number_of(bnd, "xmin", "bndbox")?;
        let ymin = number_of(bnd, "ymin", "bndbox")?;
        let xmax = number_of(bnd, "xmax", "bndbox")?;
        let ymax = number_of(bnd, "ymax", "bndbox")?;
        let bbox = BoundingBox::new(xmin - 1.0, ymin - 1.0, xmax, ymax)
            .map_err(|e| DataError::MalformedAnnotation(format!("object `{category}`: {e}")))?;
        if !bbox.is_within(width, height) {
            return Err(DataError::BoxOutOfBounds {
                category,
                bbox,
                width,
                height,
            });
        }
        objects.push(ObjectAnnotation {
            category,
            bbox,
            difficult,
        });
    }
    let id = Path::new(&filename)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(AnnotatedImage {
        id,
        path: PathBuf::from(filename),
        width,
        height,
        objects,
    })
}

/// Serialises an annotation to VOC XML; inverse of [`parse_voc_annotation`]
/// for integer boxes.
pub fn to_voc_xml(a: &AnnotatedImage) -> String {
    let filename = a
        .path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| format!("{}.png", a.id));
    let mut s = String::new();
    s.push_str("<annotation>\n");
    let _ = writeln!(s, "  <filename>{filename}</filename>");
    let _ = writeln!(
        s,
        "  <size>\n    <width>{}</width>\n    <height>{}</height>\n    <depth>3</depth>\n  </size>",
        a.width, a.height
    );
    for o in &a.objects {
        let _ = writeln!(s, "  <object>\n    <name>{}</name>", o.category);
        let _ = writeln!(s, "    <difficult>{}</difficult>", u8::from(o.difficult));
        let _ = writeln!(
            s,
            "    <bndbox>\n      <xmin>{}</xmin>\n      <ymin>{}</ymin>\n      <xmax>{}</xmax>\n      <ymax>{}</ymax>\n    </bndbox>\n  </object>",
            o.bbox.x1 + 1.0,
            o.bbox.y1 + 1.0,
            o.bbox.x2,
            o.bbox.y2
        );
    }
    s.push_str("</annotation>\n");
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub split: String,
    pub images: Vec<AnnotatedImage>,
    /// category -> positions in `images`
    pub by_category: BTreeMap<String, Vec<usize>>,
}

impl DatasetIndex {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn categories(&self) -> Vec<&str> {
        self.by_category.keys().map(String::as_str).collect()
    }

    pub fn images_for(&self, category: &str) -> impl Iterator<Item = &AnnotatedImage> {
        self.by_category
            .get(category)
            .into_iter()
            .flatten()
            .map(move |&i| &self.images[i])
    }

    /// Loads every image of the split that contains `category`, or all
    /// images when `category` is `None`.
    pub fn load_samples(&self, category: Option<&str>) -> Result<Vec<Sample>, DataError> {
        let selected: Vec<&AnnotatedImage> = match category {
            Some(c) => self.images_for(c).collect(),
            None => self.images.iter().collect(),
        };
        selected
            .into_iter()
            .map(|a| {
                Ok(Sample {
                    image: load_rgb(&a.path)?,
                    annotation: a.clone(),
                })
            })
            .collect()
    }
}

pub fn load_rgb(path: &Path) -> Result<RgbImage, DataError> {
    Ok(image::open(path).map_err(|e| io_err(path, e))?.to_rgb8())
}

/// Indexes `root/ImageSets/Main/{split}.txt`, reading each listed id's
/// annotation and locating its image under `JPEGImages/` (`.jpg` or `.png`).
pub fn build_index(root: &Path, split: &str) -> Result<DatasetIndex, DataError> {
    let split_path = root.join("ImageSets").join("Main").join(format!("{split}.txt"));
    let listing = fs::read_to_string(&split_path).map_err(|_| DataError::MissingSplitFile(split_path.clone()))?;
    let mut images = Vec::new();
    let mut by_category: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for id in listing.lines().map(str::trim).filter(|l| !l.is_empty()) {
        // per-class split files carry a trailing label column
        let id = id.split_whitespace().next().unwrap_or(id);
        let ann_path = root.join("Annotations").join(format!("{id}.xml"));
        let xml = fs::read_to_string(&ann_path).map_err(|_| DataError::MissingImage {
            id: id.to_string(),
            what: format!("annotation {}", ann_path.display()),
        })?;
        let mut ann = parse_voc_annotation(&xml)?;
        let img_dir = root.join("JPEGImages");
        let path = ["jpg", "jpeg", "png"]
            .iter()
            .map(|ext| img_dir.join(format!("{id}.{ext}")))
            .find(|p| p.is_file())
            .ok_or_else(|| DataError::MissingImage {
                id: id.to_string(),
                what: format!("image file in {}", img_dir.display()),
            })?;
        ann.id = id.to_string();
        ann.path = path;
        let pos = images.len();
        for c in ann.categories() {
            by_category.entry(c.to_string()).or_default().push(pos);
        }
        images.push(ann);
    }
    Ok(DatasetIndex {
        root: root.to_path_buf(),
        split: split.to_string(),
        images,
        by_category,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub min_side: u32,
    pub max_side: u32,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            min_side: 64,
            max_side: 128,
        }
    }
}

/// `n` images of a dark noisy background with one bright axis-aligned
/// rectangle, each annotated with the rectangle's exact extent.
pub fn generate_synthetic(n: usize, sizes: SyntheticConfig, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0f64, 10.0).expect("valid sigma");
    let (lo, hi) = (sizes.min_side.max(16), sizes.max_side.max(sizes.min_side.max(16)));
    (0..n)
        .map(|i| {
            let w = rng.gen_range(lo..=hi);
            let h = rng.gen_range(lo..=hi);
            let side = |rng: &mut ChaCha8Rng, full: u32| {
                let a = (f64::from(full) * 0.2).ceil() as u32;
                let b = ((f64::from(full) * 0.6).floor() as u32).max(a);
                rng.gen_range(a..=b)
            };
            let rw = side(&mut rng, w);
            let rh = side(&mut rng, h);
            let rx = rng.gen_range(0..=w - rw);
            let ry = rng.gen_range(0..=h - rh);
            let background = 40.0;
            let fill: f64 = rng.gen_range(215.0..=240.0);
            let mut img = RgbImage::new(w, h);
            for y in 0..h {
                for x in 0..w {
                    let inside = x >= rx && x < rx + rw && y >= ry && y < ry + rh;
                    let v = if inside {
                        (fill + noise.sample(&mut rng)).clamp(200.0, 255.0)
                    } else {
                        (background + noise.sample(&mut rng)).clamp(0.0, 120.0)
                    };
                    let v = v.round() as u8;
                    img.put_pixel(x, y, Rgb([v, v, v]));
                }
            }
            let id = format!("synth_{i:05}");
            let bbox = BoundingBox::new(f64::from(rx), f64::from(ry), f64::from(rx + rw), f64::from(ry + rh))
                .expect("non-degenerate rectangle");
            Sample {
                annotation: AnnotatedImage {
                    path: PathBuf::from(format!("{id}.png")),
                    id,
                    width: w,
                    height: h,
                    objects: vec![ObjectAnnotation {
                        category: SYNTHETIC_CATEGORY.to_string(),
                        bbox,
                        difficult: false,
                    }],
                },
                image: img,
            }
        })
        .collect()
}

/// Writes samples as a VOC tree (PNG images) and appends their ids to the
/// split file.
pub fn export_voc(samples: &[Sample], root: &Path, split: &str) -> Result<(), DataError> {
    let ann_dir = root.join("Annotations");
    let img_dir = root.join("JPEGImages");
    let set_dir = root.join("ImageSets").join("Main");
    for d in [&ann_dir, &img_dir, &set_dir] {
        fs::create_dir_all(d).map_err(|e| io_err(d, e))?;
    }
    let mut listing = String::new();
    for s in samples {
        let id = &s.annotation.id;
        let img_path = img_dir.join(format!("{id}.png"));
        s.image.save(&img_path).map_err(|e| io_err(&img_path, e))?;
        let mut ann = s.annotation.clone();
        ann.path = PathBuf::from(format!("{id}.png"));
        let ann_path = ann_dir.join(format!("{id}.xml"));
        fs::write(&ann_path, to_voc_xml(&ann)).map_err(|e| io_err(&ann_path, e))?;
        listing.push_str(id);
        listing.push('\n');
    }
    let split_path = set_dir.join(format!("{split}.txt"));
    fs::write(&split_path, listing).map_err(|e| io_err(&split_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const DOG: &str = r#"<annotation>
  <folder>VOC2007</folder>
  <filename>000001.jpg</filename>
  <size><width>500</width><height>375</height><depth>3</depth></size>
  <object>
    <name>dog</name>
    <pose>Left</pose>
    <truncated>1</truncated>
    <difficult>0</difficult>
    <bndbox><xmin>48</xmin><ymin>240</ymin><xmax>195</xmax><ymax>371</ymax></bndbox>
  </object>
  <object>
    <name>person</name>
    <difficult>1</difficult>
    <bndbox><xmin>8</xmin><ymin>12</ymin><xmax>352</xmax><ymax>375</ymax></bndbox>
  </object>
</annotation>"#;

    #[test]
    fn parses_dog_fixture() {
        let a = parse_voc_annotation(DOG).unwrap();
        assert_eq!((a.id.as_str(), a.width, a.height), ("000001", 500, 375));
        assert_eq!(a.objects.len(), 2);
        assert_eq!(a.objects[0].category, "dog");
        assert_eq!(a.objects[0].bbox, BoundingBox::new(47.0, 239.0, 195.0, 371.0).unwrap());
        assert!(!a.objects[0].difficult);
        assert!(a.objects[1].difficult);
    }

    #[test]
    fn xml_round_trip() {
        let a = parse_voc_annotation(DOG).unwrap();
        let b = parse_voc_annotation(&to_voc_xml(&a)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn malformed_inputs() {
        let no_box = DOG.replace(
            "<bndbox><xmin>48</xmin><ymin>240</ymin><xmax>195</xmax><ymax>371</ymax></bndbox>",
            "",
        );
        assert!(matches!(parse_voc_annotation(&no_box), Err(DataError::MalformedAnnotation(_))));
        let outside = DOG.replace("<xmax>195</xmax>", "<xmax>501</xmax>");
        assert!(matches!(parse_voc_annotation(&outside), Err(DataError::BoxOutOfBounds { .. })));
        assert!(matches!(parse_voc_annotation("<annotation>"), Err(DataError::MalformedAnnotation(_))));
        let no_size = DOG.replace("<width>500</width>", "");
        assert!(matches!(parse_voc_annotation(&no_size), Err(DataError::MalformedAnnotation(_))));
    }

    #[test]
    fn synthetic_contract() {
        let a = generate_synthetic(20, SyntheticConfig::default(), 5);
        let b = generate_synthetic(20, SyntheticConfig::default(), 5);
        assert_eq!(a, b);
        for s in &a {
            let (w, h) = (s.annotation.width, s.annotation.height);
            assert!((64..=128).contains(&w) && (64..=128).contains(&h));
            assert_eq!(s.annotation.objects.len(), 1);
            let g = s.annotation.objects[0].bbox;
            assert_eq!(s.annotation.objects[0].category, SYNTHETIC_CATEGORY);
            assert!(g.is_within(w, h));
            assert!(g.width() >= 0.2 * f64::from(w) && g.height() >= 0.2 * f64::from(h));
            assert!(g.width() <= 0.6 * f64::from(w) && g.height() <= 0.6 * f64::from(h));
            // pixel-exact extent
            for y in 0..h {
                for x in 0..w {
                    let inside = f64::from(x) >= g.x1 && f64::from(x) < g.x2 && f64::from(y) >= g.y1 && f64::from(y) < g.y2;
                    let v = s.image.get_pixel(x, y)[0];
                    assert_eq!(inside, v >= 200, "pixel ({x},{y})");
                }
            }
        }
        assert_eq!(generate_synthetic(100, SyntheticConfig::default(), 1).len(), 100);
    }

    #[test]
    fn export_then_index() {
        let dir = tempfile::tempdir().unwrap();
        let samples = generate_synthetic(3, SyntheticConfig::default(), 9);
        export_voc(&samples, dir.path(), "trainval").unwrap();
        let index = build_index(dir.path(), "trainval").unwrap();
        assert_eq!(index.len(), 3);
        assert_eq!(index.categories(), vec![SYNTHETIC_CATEGORY]);
        let loaded = index.load_samples(Some(SYNTHETIC_CATEGORY)).unwrap();
        for (a, b) in samples.iter().zip(&loaded) {
            assert_eq!(a.image, b.image);
            assert_eq!(a.annotation.objects, b.annotation.objects);
        }
        assert!(matches!(build_index(dir.path(), "test"), Err(DataError::MissingSplitFile(_))));
        fs::write(dir.path().join("ImageSets/Main/bad.txt"), "synth_00000\nghost\n").unwrap();
        match build_index(dir.path(), "bad") {
            Err(DataError::MissingImage { id, .. }) => assert_eq!(id, "ghost"),
            other => panic!("{other:?}"),
        }
    }
}
