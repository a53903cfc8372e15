use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Ending, StoryPair};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Invalid(format!("unknown split {other:?}"))),
        }
    }
}

/// Reads a TimeTravel-style JSONL file: one story pair per line with fields
/// `premise`, `initial`, `counterfactual`, `original_ending`, and either
/// `edited_ending` (train, optional) or `edited_endings` (dev/test, required).
///
/// Blank lines are ignored; any other malformed line fails the whole load.
pub fn load_dataset(path: &Path, split: Split) -> Result<Vec<StoryPair>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let err = |message: String| Error::Dataset {
            path: path.to_path_buf(),
            line: lineno,
            message,
        };
        let value: Value = serde_json::from_str(line).map_err(|e| err(format!("malformed JSON: {e}")))?;
        let pair = parse_record(&value, split, lineno).map_err(err)?;
        pairs.push(pair);
    }
    Ok(pairs)
}

/// Writes pairs in the same JSONL layout [`load_dataset`] reads. Train
/// records carry the first reference as `edited_ending`; dev/test records
/// carry all of them as `edited_endings`.
pub fn write_dataset(path: &Path, pairs: &[StoryPair], split: Split) -> Result<()> {
    let mut out = String::new();
    for p in pairs {
        let mut rec = serde_json::Map::new();
        rec.insert("story_id".into(), Value::from(p.id.clone()));
        rec.insert("premise".into(), Value::from(p.story.premise.clone()));
        rec.insert("initial".into(), Value::from(p.story.condition.clone()));
        rec.insert("counterfactual".into(), Value::from(p.counterfactual_condition.clone()));
        rec.insert("original_ending".into(), Value::from(p.story.ending.to_vec()));
        match split {
            Split::Train => {
                if let Some(e) = p.reference_endings.first() {
                    rec.insert("edited_ending".into(), Value::from(e.to_vec()));
                }
            }
            Split::Dev | Split::Test => {
                if p.reference_endings.is_empty() {
                    return Err(Error::Invalid(format!("{}: {} pairs need reference endings", p.id, split.as_str())));
                }
                let refs: Vec<Value> = p.reference_endings.iter().map(|e| Value::from(e.to_vec())).collect();
                rec.insert("edited_endings".into(), Value::Array(refs));
            }
        }
        out.push_str(&Value::Object(rec).to_string());
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn parse_record(v: &Value, split: Split, lineno: usize) -> std::result::Result<StoryPair, String> {
    let obj = v.as_object().ok_or("expected a JSON object")?;
    let text_field = |name: &str| -> std::result::Result<String, String> {
        match obj.get(name) {
            None => Err(format!("missing field {name:?}")),
            Some(Value::String(s)) if !s.trim().is_empty() => Ok(s.trim().to_string()),
            Some(_) => Err(format!("field {name:?} must be a non-empty string")),
        }
    };
    let id = match obj.get("story_id") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        _ => format!("{}-{}", split.as_str(), lineno),
    };
    let premise = text_field("premise")?;
    let condition = text_field("initial")?;
    let counterfactual = text_field("counterfactual")?;
    let original = obj
        .get("original_ending")
        .ok_or_else(|| "missing field \"original_ending\"".to_string())
        .and_then(|e| parse_ending(e, "original_ending"))?;

    let references = match split {
        Split::Train => match obj.get("edited_ending") {
            Some(e) => vec![parse_ending(e, "edited_ending")?],
            None => Vec::new(),
        },
        Split::Dev | Split::Test => {
            let list = obj
                .get("edited_endings")
                .ok_or("missing field \"edited_endings\"")?
                .as_array()
                .ok_or("field \"edited_endings\" must be a list")?;
            if list.is_empty() {
                return Err("field \"edited_endings\" is empty".into());
            }
            list.iter()
                .map(|e| parse_ending(e, "edited_endings"))
                .collect::<std::result::Result<Vec<_>, _>>()?
        }
    };

    StoryPair::new(id, premise, condition, original, counterfactual, references)
        .map_err(|e| e.to_string())
}

/// Accepts either one string or a list of sentence strings and normalizes it
/// to exactly three sentences.
fn parse_ending(v: &Value, field: &str) -> std::result::Result<Ending, String> {
    let pieces: Vec<String> = match v {
        Value::String(s) => vec![s.clone()],
        Value::Array(items) => items
            .iter()
            .map(|x| {
                x.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| format!("field {field:?} must hold strings"))
            })
            .collect::<std::result::Result<_, _>>()?,
        _ => return Err(format!("field {field:?} must be a string or list of strings")),
    };
    let pieces: Vec<String> = pieces
        .into_iter()
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    let sentences = if pieces.len() == 3 {
        pieces
    } else {
        split_sentences(&pieces.join(" "))
    };
    normalize_three(sentences).ok_or_else(|| format!("field {field:?} has fewer than 3 sentences"))
}

/// Splits free text into a three-sentence ending; sentences past the second
/// are merged into the third. `None` if fewer than three sentences.
pub fn ending_from_text(text: &str) -> Option<Ending> {
    normalize_three(split_sentences(text))
}

fn normalize_three(mut sentences: Vec<String>) -> Option<Ending> {
    if sentences.len() < 3 {
        return None;
    }
    if sentences.len() > 3 {
        let tail = sentences.split_off(2).join(" ");
        sentences.push(tail);
    }
    let mut it = sentences.into_iter();
    Some([it.next()?, it.next()?, it.next()?])
}

/// Naive sentence splitter: breaks after runs of `.`, `!` or `?` (plus any
/// closing quotes) that are followed by whitespace or end of text.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        if matches!(chars[i], '.' | '!' | '?') {
            let mut j = i + 1;
            while j < chars.len() && matches!(chars[j], '.' | '!' | '?' | '"' | '\'' | ')') {
                j += 1;
            }
            if j == chars.len() || chars[j].is_whitespace() {
                let s: String = chars[start..j].iter().collect();
                if !s.trim().is_empty() {
                    out.push(s.trim().to_string());
                }
                start = j;
            }
            i = j;
        } else {
            i += 1;
        }
    }
    let rest: String = chars[start..].iter().collect();
    if !rest.trim().is_empty() {
        out.push(rest.trim().to_string());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    const TRAIN: &str = r#"{"story_id":"s1","premise":"Ann went out.","initial":"It was sunny.","counterfactual":"It was raining.","original_ending":"She ran to the field. She picked flowers. She went home.","edited_ending":["She ran to the building.","She bought flowers.","She went home."]}"#;
    const DEV: &str = r#"{"premise":"Ann went out.","initial":"It was sunny.","counterfactual":"It was raining.","original_ending":"She ran to the field. She picked flowers. She went home.","edited_endings":[["A a.","B b.","C c."],["D d.","E e.","F f."],"G g. H h. I i."]}"#;

    #[test]
    fn train_line_gets_one_reference() {
        let f = write_lines(&[TRAIN]);
        let pairs = load_dataset(f.path(), Split::Train).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].id, "s1");
        assert_eq!(pairs[0].reference_endings.len(), 1);
        assert_eq!(pairs[0].story.ending[1], "She picked flowers.");
    }

    #[test]
    fn dev_line_gets_three_references() {
        let f = write_lines(&[DEV]);
        let pairs = load_dataset(f.path(), Split::Dev).unwrap();
        assert_eq!(pairs[0].reference_endings.len(), 3);
        assert_eq!(pairs[0].reference_endings[2][1], "H h.");
        assert_eq!(pairs[0].id, "dev-1");
    }

    #[test]
    fn missing_field_names_field_and_line() {
        let bad = TRAIN.replace("\"counterfactual\"", "\"counterfactually\"");
        let f = write_lines(&[TRAIN, &bad]);
        let err = load_dataset(f.path(), Split::Train).unwrap_err();
        match &err {
            Error::Dataset { line, message, .. } => {
                assert_eq!(*line, 2);
                assert!(message.contains("counterfactual"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_json_reports_line() {
        let f = write_lines(&[TRAIN, "", "{not json"]);
        match load_dataset(f.path(), Split::Train).unwrap_err() {
            Error::Dataset { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_file() {
        let err = load_dataset(Path::new("/nonexistent/x.jsonl"), Split::Train).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn dev_requires_edited_endings() {
        let f = write_lines(&[TRAIN]);
        assert!(load_dataset(f.path(), Split::Dev).is_err());
    }

    #[test]
    fn short_ending_rejected() {
        let bad = TRAIN.replace(
            "She ran to the field. She picked flowers. She went home.",
            "She ran.",
        );
        let f = write_lines(&[&bad]);
        assert!(load_dataset(f.path(), Split::Train).is_err());
    }

    #[test]
    fn sentence_splitting() {
        assert_eq!(
            split_sentences("He left. \"Wow!\" she said. Done"),
            vec!["He left.", "\"Wow!\"", "she said.", "Done"]
        );
        assert_eq!(split_sentences("It cost 3.50 dollars."), vec!["It cost 3.50 dollars."]);
    }

    #[test]
    fn extra_sentences_merge_into_last() {
        let e = parse_ending(&Value::String("A. B. C. D.".into()), "x").unwrap();
        assert_eq!(e, ["A.".to_string(), "B.".to_string(), "C. D.".to_string()]);
    }
}
