//! The fenced key/value reply format used by the reasoning steps.
//!
//! ````text
//! ```kv
//! problem: first
//! category: ModelRelated
//! ---
//! problem: second
//! category: DataRelated
//! ```
//! ````
//!
//! Keys are case-insensitive. A line without a colon continues the previous
//! value.

use std::collections::BTreeMap;

pub type Record = BTreeMap<String, String>;

/// Text of the first fenced block, preferring one tagged `kv`.
fn block(text: &str) -> &str {
    let tagged = text.find("```kv").map(|i| i + "```kv".len());
    let any = text.find("```").map(|i| i + 3 + text[i + 3..].find('\n').unwrap_or(0));
    match tagged.or(any) {
        Some(start) => {
            let rest = &text[start..];
            match rest.find("```") {
                Some(end) => &rest[..end],
                None => rest,
            }
        }
        None => text,
    }
}

pub fn parse_records(text: &str) -> Result<Vec<Record>, String> {
    let mut records = Vec::new();
    let mut current = Record::new();
    let mut last_key: Option<String> = None;
    for raw in block(text).lines() {
        let line = raw.trim();
        if line == "---" {
            if !current.is_empty() {
                records.push(std::mem::take(&mut current));
            }
            last_key = None;
            continue;
        }
        if line.is_empty() {
            continue;
        }
        match line.split_once(':') {
            Some((k, v)) if !k.trim().is_empty() && !k.trim().contains(' ') => {
                let key = k.trim().to_ascii_lowercase();
                current.insert(key.clone(), v.trim().to_string());
                last_key = Some(key);
            }
            _ => match &last_key {
                Some(k) => {
                    let v = current.get_mut(k).expect("key present");
                    v.push(' ');
                    v.push_str(line);
                }
                None => return Err(format!("line without a key: {line:?}")),
            },
        }
    }
    if !current.is_empty() {
        records.push(current);
    }
    if records.is_empty() {
        return Err("no key/value records found".into());
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_records_and_continuations() {
        let text = "Sure.\n```kv\nproblem: too slow\n  when data is big\ncategory: ImplementationRelated\n---\nProblem: leak\ncategory: DataRelated\n```\nbye";
        let r = parse_records(text).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[0]["problem"], "too slow when data is big");
        assert_eq!(r[1]["problem"], "leak");
    }

    #[test]
    fn colons_inside_values_are_kept() {
        let r = parse_records("```kv\nhypothesis: use lr: 0.01\n```").unwrap();
        assert_eq!(r[0]["hypothesis"], "use lr: 0.01");
    }

    #[test]
    fn rejects_empty_and_keyless() {
        assert!(parse_records("```kv\n```").is_err());
        assert!(parse_records("just prose here").is_err());
    }
}
