//! Polygon-per-line label files, as distributed with curved-text
//! benchmarks: each line is `x1,y1,x2,y2,...`, optionally followed by
//! `,####transcript`. The transcript is ignored.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use textboot::data::{read_pgm_dims, write_manifest, Annotation, AnnotationRecord};
use textboot::geometry::Polygon;

use crate::ConvertArgs;

pub fn parse_label_file(text: &str, path: &Path) -> Result<Vec<Polygon>> {
    let mut polygons = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let coords = line.split_once("####").map_or(line, |(c, _)| c);
        let values = coords
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::parse::<f64>)
            .collect::<Result<Vec<_>, _>>()
            .with_context(|| format!("{}:{}: bad coordinate", path.display(), i + 1))?;
        let polygon = Polygon::from_flat(&values)
            .with_context(|| format!("{}:{}", path.display(), i + 1))?;
        polygons.push(polygon);
    }
    Ok(polygons)
}

pub fn convert(a: ConvertArgs) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(&a.labels)
        .with_context(|| format!("reading {}", a.labels.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    entries.sort();
    let mut records = Vec::with_capacity(entries.len());
    for label in &entries {
        let id = label
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let image = a.images.join(format!("{id}.pgm"));
        if !image.is_file() {
            bail!("no image {} for labels {}", image.display(), label.display());
        }
        read_pgm_dims(&image)?;
        let text = fs::read_to_string(label)
            .with_context(|| format!("reading {}", label.display()))?;
        let polygons = parse_label_file(&text, label)?;
        let image = fs::canonicalize(&image).unwrap_or(image);
        records.push(AnnotationRecord::new(id, image, Annotation::Strong(polygons)));
    }
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    write_manifest(&records, &a.out)?;
    println!("converted {} label files -> {}", records.len(), a.out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transcripts_and_blank_lines_are_skipped() {
        let text = "1,1,10,1,10,5,1,5,####hello, world\n\n2,2,6,2,6,8\n";
        let polys = parse_label_file(text, Path::new("a.txt")).unwrap();
        assert_eq!(polys.len(), 2);
        assert_eq!(polys[0].to_flat(), vec![1., 1., 10., 1., 10., 5., 1., 5.]);
        assert_eq!(polys[1].vertices().len(), 3);
    }

    #[test]
    fn bad_lines_report_their_position() {
        let err = parse_label_file("1,2,3\n1,x,3,4,5,6\n", Path::new("b.txt")).unwrap_err();
        assert!(format!("{err:#}").contains("b.txt:1"));
        let err = parse_label_file("0,0,4,0,4,4,0,4\n1,x,3,4,5,6\n", Path::new("b.txt")).unwrap_err();
        assert!(format!("{err:#}").contains("b.txt:2"));
    }
}
