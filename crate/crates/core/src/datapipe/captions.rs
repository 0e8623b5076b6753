use std::path::Path;
use std::str::FromStr;

use crate::textpipe::{LengthFilter, Rejection};
use crate::{Error, Result};

/// Caption file layouts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CaptionFormat {
    /// `image_name|comment_number|comment`, optional header row.
    Flickr30kPipe,
    /// `image_name<TAB>caption`; a trailing `#n` on the name is dropped.
    Tsv,
}

impl CaptionFormat {
    /// Pipe format if the first non-empty line has a `|`, else TSV.
    pub fn detect(text: &str) -> Self {
        match text.lines().find(|l| !l.trim().is_empty()) {
            Some(l) if l.contains('|') => CaptionFormat::Flickr30kPipe,
            _ => CaptionFormat::Tsv,
        }
    }
}

impl FromStr for CaptionFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pipe" | "flickr30k-pipe" | "flickr30k" => Ok(CaptionFormat::Flickr30kPipe),
            "tsv" => Ok(CaptionFormat::Tsv),
            other => Err(Error::config(format!("unknown caption format {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CaptionRecord {
    pub image_id: String,
    pub raw: String,
    pub normalized: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RejectedCaption {
    pub line: usize,
    pub image_id: String,
    pub reason: Rejection,
}

/// Result of reading a caption file.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoadedCaptions {
    pub records: Vec<CaptionRecord>,
    pub rejected: Vec<RejectedCaption>,
    /// Images whose every caption was rejected.
    pub dropped_images: Vec<String>,
}

/// All surviving captions of one image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageCaptions {
    pub image_id: String,
    pub captions: Vec<CaptionRecord>,
}

/// Parses caption text. `source` names the input in error messages.
pub fn parse_captions(
    text: &str,
    format: CaptionFormat,
    filter: &LengthFilter,
    source: &str,
) -> Result<LoadedCaptions> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: source.to_owned(),
        line,
        msg,
    };
    let mut out = LoadedCaptions::default();
    let mut seen: Vec<String> = Vec::new();
    let mut seen_set = std::collections::HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (image_id, raw) = match format {
            CaptionFormat::Flickr30kPipe => {
                let fields: Vec<&str> = line.splitn(3, '|').collect();
                if fields.len() != 3 {
                    return Err(parse_err(
                        lineno,
                        format!("expected 3 '|'-separated fields, found {}", fields.len()),
                    ));
                }
                let name = fields[0].trim();
                if idx == 0 && name == "image_name" {
                    continue;
                }
                if fields[1].trim().parse::<u32>().is_err() {
                    return Err(parse_err(
                        lineno,
                        format!("comment number {:?} is not an integer", fields[1].trim()),
                    ));
                }
                (name, fields[2])
            }
            CaptionFormat::Tsv => {
                let Some((name, caption)) = line.split_once('\t') else {
                    return Err(parse_err(lineno, "expected image_name<TAB>caption".into()));
                };
                let name = name.trim();
                let name = match name.rsplit_once('#') {
                    Some((stem, n)) if n.chars().all(|c| c.is_ascii_digit()) && !n.is_empty() => stem,
                    _ => name,
                };
                (name, caption)
            }
        };
        if image_id.is_empty() {
            return Err(parse_err(lineno, "empty image name".into()));
        }
        if seen_set.insert(image_id.to_owned()) {
            seen.push(image_id.to_owned());
        }
        match filter.clean(raw) {
            Ok(normalized) => out.records.push(CaptionRecord {
                image_id: image_id.to_owned(),
                raw: raw.trim().to_owned(),
                normalized,
            }),
            Err(reason) => out.rejected.push(RejectedCaption {
                line: lineno,
                image_id: image_id.to_owned(),
                reason,
            }),
        }
    }
    let kept: std::collections::HashSet<&str> =
        out.records.iter().map(|r| r.image_id.as_str()).collect();
    let dropped = seen.into_iter().filter(|id| !kept.contains(id.as_str())).collect();
    out.dropped_images = dropped;
    Ok(out)
}

/// Reads and parses a caption file; `format = None` auto-detects.
pub fn load_captions(
    path: &Path,
    format: Option<CaptionFormat>,
    filter: &LengthFilter,
) -> Result<LoadedCaptions> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let format = format.unwrap_or_else(|| CaptionFormat::detect(&text));
    parse_captions(&text, format, filter, &path.display().to_string())
}

/// Groups records by image, in order of first appearance.
pub fn group_by_image(records: &[CaptionRecord]) -> Vec<ImageCaptions> {
    let mut groups: Vec<ImageCaptions> = Vec::new();
    let mut index = std::collections::HashMap::new();
    for r in records {
        let slot = *index.entry(r.image_id.clone()).or_insert_with(|| {
            groups.push(ImageCaptions {
                image_id: r.image_id.clone(),
                captions: Vec::new(),
            });
            groups.len() - 1
        });
        groups[slot].captions.push(r.clone());
    }
    groups
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, format: CaptionFormat) -> Result<LoadedCaptions> {
        parse_captions(text, format, &LengthFilter::default(), "test")
    }

    #[test]
    fn pipe_row() {
        let got = parse("dog.jpg|0| A dog runs.", CaptionFormat::Flickr30kPipe).unwrap();
        assert_eq!(
            got.records,
            vec![CaptionRecord {
                image_id: "dog.jpg".into(),
                raw: "A dog runs.".into(),
                normalized: "a dog runs".into(),
            }]
        );
    }

    #[test]
    fn pipe_header_is_skipped_and_short_rows_fail() {
        let text = "image_name| comment_number| comment\na.jpg| 0| Two dogs play\n";
        assert_eq!(parse(text, CaptionFormat::Flickr30kPipe).unwrap().records.len(), 1);
        let err = parse("a.jpg|0|x y\nb.jpg|only two", CaptionFormat::Flickr30kPipe).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn tsv_rows_strip_caption_index() {
        let got = parse("a.jpg#3\tA cat sleeps\nb.jpg\tA bird sings", CaptionFormat::Tsv).unwrap();
        assert_eq!(got.records[0].image_id, "a.jpg");
        assert_eq!(got.records[1].image_id, "b.jpg");
        assert!(parse("no tab here", CaptionFormat::Tsv).is_err());
    }

    #[test]
    fn fully_rejected_image_is_dropped_with_warning() {
        let text = "a.jpg|0|!!! ???\nb.jpg|0|a horse\na.jpg|1|dog";
        let got = parse(text, CaptionFormat::Flickr30kPipe).unwrap();
        assert_eq!(got.records.len(), 1);
        assert_eq!(got.rejected.len(), 2);
        assert_eq!(got.rejected[0].reason, Rejection::Empty);
        assert_eq!(got.dropped_images, vec!["a.jpg".to_string()]);
    }

    #[test]
    fn ten_rows_group_into_two_images() {
        let mut text = String::new();
        for img in ["x.jpg", "y.jpg"] {
            for i in 0..5 {
                text.push_str(&format!("{img}|{i}| caption number {i} here\n"));
            }
        }
        let got = parse(&text, CaptionFormat::Flickr30kPipe).unwrap();
        assert_eq!(got.records.len(), 10);
        let groups = group_by_image(&got.records);
        assert_eq!(groups.len(), 2);
        assert!(groups.iter().all(|g| g.captions.len() == 5));
        assert_eq!(groups[0].image_id, "x.jpg");
    }

    #[test]
    fn detection() {
        assert_eq!(CaptionFormat::detect("\na|0|b"), CaptionFormat::Flickr30kPipe);
        assert_eq!(CaptionFormat::detect("a\tb"), CaptionFormat::Tsv);
    }
}
