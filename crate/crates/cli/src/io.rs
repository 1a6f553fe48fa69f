//! PNG datasets and CSV tables.

use std::fs;
use std::path::{Path, PathBuf};

use ocda_core::color::{Channel, Histogram, StyleTriple};
use ocda_core::{Image, LabelMap, Sample};

use crate::error::CliError;

pub fn io_err(path: &Path, e: impl ToString) -> CliError {
    CliError::Io { path: path.to_path_buf(), message: e.to_string() }
}

pub fn create_parent(path: &Path) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    Ok(())
}

pub fn write_png(path: &Path, img: &Image) -> Result<(), CliError> {
    create_parent(path)?;
    image::save_buffer(path, img.data(), img.width() as u32, img.height() as u32, image::ColorType::Rgb8)
        .map_err(|e| io_err(path, e))
}

pub fn read_png(path: &Path) -> Result<Image, CliError> {
    let rgb = image::open(path).map_err(|e| io_err(path, e))?.into_rgb8();
    let (w, h) = rgb.dimensions();
    Image::new(w as usize, h as usize, rgb.into_raw()).map_err(|e| io_err(path, e))
}

/// Labels are single-channel PNGs holding class indices.
pub fn write_label_png(path: &Path, label: &LabelMap) -> Result<(), CliError> {
    create_parent(path)?;
    image::save_buffer(path, label.data(), label.width() as u32, label.height() as u32, image::ColorType::L8)
        .map_err(|e| io_err(path, e))
}

pub fn read_label_png(path: &Path) -> Result<LabelMap, CliError> {
    let gray = image::open(path).map_err(|e| io_err(path, e))?.into_luma8();
    let (w, h) = gray.dimensions();
    LabelMap::new(w as usize, h as usize, gray.into_raw()).map_err(|e| io_err(path, e))
}

pub fn image_name(i: usize) -> String {
    format!("{i:04}.png")
}

/// Sorted PNG file names of a directory.
pub fn list_pngs(dir: &Path) -> Result<Vec<String>, CliError> {
    if !dir.is_dir() {
        return Err(CliError::MissingArtifact(dir.to_path_buf()));
    }
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|entry| entry.ok())
        .filter_map(|entry| entry.file_name().into_string().ok())
        .filter(|n| n.ends_with(".png"))
        .collect();
    names.sort();
    Ok(names)
}

/// Images of `<dir>/images`, with their file names.
pub fn read_images(dir: &Path) -> Result<(Vec<String>, Vec<Image>), CliError> {
    let img_dir = dir.join("images");
    let names = list_pngs(&img_dir)?;
    if names.is_empty() {
        return Err(CliError::MissingArtifact(img_dir));
    }
    let images = names.iter().map(|n| read_png(&img_dir.join(n))).collect::<Result<_, _>>()?;
    Ok((names, images))
}

/// `<dir>/images/*.png` paired with `<dir>/labels/*.png` of the same name.
pub fn read_samples(dir: &Path) -> Result<Vec<Sample>, CliError> {
    let (names, images) = read_images(dir)?;
    names
        .iter()
        .zip(images)
        .map(|(n, image)| {
            let path = dir.join("labels").join(n);
            if !path.is_file() {
                return Err(CliError::MissingArtifact(path));
            }
            let label = read_label_png(&path)?;
            Sample::new(image, label).map_err(|e| io_err(&path, e))
        })
        .collect()
}

pub fn write_samples(dir: &Path, samples: &[Sample]) -> Result<Vec<PathBuf>, CliError> {
    let mut written = Vec::with_capacity(2 * samples.len());
    for (i, s) in samples.iter().enumerate() {
        let img = dir.join("images").join(image_name(i));
        let lbl = dir.join("labels").join(image_name(i));
        write_png(&img, &s.image)?;
        write_label_png(&lbl, &s.label)?;
        written.push(img);
        written.push(lbl);
    }
    Ok(written)
}

pub fn write_csv<R, I>(path: &Path, header: &[&str], rows: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    create_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(header).map_err(|e| io_err(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Data rows of a CSV; the header must equal `header`.
pub fn read_csv(path: &Path, header: &[&str]) -> Result<Vec<Vec<String>>, CliError> {
    if !path.is_file() {
        return Err(CliError::MissingArtifact(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let found: Vec<String> = r.headers().map_err(|e| io_err(path, e))?.iter().map(String::from).collect();
    if found != header {
        return Err(io_err(path, format!("header {found:?}, expected {header:?}")));
    }
    r.records()
        .map(|rec| rec.map(|r| r.iter().map(String::from).collect()).map_err(|e| io_err(path, e)))
        .collect()
}

pub fn parse_field<T: std::str::FromStr>(path: &Path, value: &str) -> Result<T, CliError> {
    value.parse().map_err(|_| io_err(path, format!("cannot parse `{value}`")))
}

pub const STYLE_HEADER: [&str; 3] = ["channel", "bin_index", "value"];

pub fn style_rows(style: &StyleTriple) -> Vec<[String; 3]> {
    style
        .channels()
        .iter()
        .flat_map(|h| {
            h.counts().iter().enumerate().map(move |(i, v)| [h.channel().name().to_string(), i.to_string(), v.to_string()])
        })
        .collect()
}

pub fn write_style(path: &Path, style: &StyleTriple) -> Result<(), CliError> {
    write_csv(path, &STYLE_HEADER, style_rows(style))
}

pub fn read_style(path: &Path) -> Result<StyleTriple, CliError> {
    let rows = read_csv(path, &STYLE_HEADER)?;
    let mut counts: [Vec<f64>; 3] = Default::default();
    for row in &rows {
        let c = [Channel::L, Channel::A, Channel::B]
            .into_iter()
            .find(|c| c.name() == row[0])
            .ok_or_else(|| io_err(path, format!("unknown channel `{}`", row[0])))?;
        let bin: usize = parse_field(path, &row[1])?;
        if bin != counts[c.index()].len() {
            return Err(io_err(path, format!("bins of channel {} out of order", row[0])));
        }
        counts[c.index()].push(parse_field(path, &row[2])?);
    }
    let [l, a, b] = counts;
    let h = |c, v| Histogram::new(c, v).map_err(|e| io_err(path, e));
    StyleTriple::new(h(Channel::L, l)?, h(Channel::A, a)?, h(Channel::B, b)?).map_err(|e| io_err(path, e))
}
