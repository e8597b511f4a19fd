//! Turns model output into [`GeoGuess`] / [`PersonaProfile`] values and
//! renders guesses back into the block format.
//!
//! The block format is a sentinel line followed by `key: value` lines and is
//! terminated by a blank line or the end of the text:
//!
//! ```text
//! GEOLOCATOR-RESULT
//! granularity: street
//! country: United States
//! state: California
//! city_town: Los Angeles
//! street: Figueroa St
//! lat: 34.0224
//! lon: -118.2851
//! confidence: 0.8
//! clue: signage | 0.9 | street sign reads Figueroa
//! ```
//!
//! When no block is present, labeled lines such as `Country: Japan` are
//! scanned instead and the result is marked as heuristic.

use std::fmt::Write as _;

use thiserror::Error;

use crate::model::{
    normalize_place_name, AdminPath, AgeRange, Clue, ClueCategory, Coordinates, Gender,
    GeoGranularity, GeoGuess, ParsePath, PersonaProfile, RawResponseRef, DEFAULT_CONFIDENCE,
};

pub const RESULT_SENTINEL: &str = "GEOLOCATOR-RESULT";
pub const PROFILE_SENTINEL: &str = "GEOLOCATOR-PROFILE";

/// Salience assigned to clues synthesized from demoted location fields.
pub const DEMOTED_SALIENCE: f64 = 0.5;
const DEFAULT_SALIENCE: f64 = 0.5;
const MAX_HEURISTIC_VALUE_LEN: usize = 120;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no location information found in model output")]
    NoLocation,
    #[error("no profile information found in model output")]
    NoProfile,
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
}

/// Placeholder values models use for "don't know"; treated as absent.
fn is_placeholder(value: &str) -> bool {
    matches!(
        normalize_place_name(value).as_str(),
        "" | "unknown"
            | "none"
            | "n a"
            | "na"
            | "null"
            | "unspecified"
            | "not determined"
            | "undetermined"
            | "未知"
            | "无"
    )
}

/// Replaces control characters (tabs, stray carriage returns) with spaces.
fn sanitize(raw: &str) -> String {
    raw.chars()
        .map(|c| if c.is_control() { ' ' } else { c })
        .collect()
}

fn clean_value(raw: &str) -> Option<String> {
    let mut v = raw.trim().trim_matches('*').trim();
    for q in ['"', '\'', '`'] {
        if v.len() >= 2 && v.starts_with(q) && v.ends_with(q) {
            v = v[1..v.len() - 1].trim();
        }
    }
    if is_placeholder(v) {
        None
    } else {
        Some(v.to_string())
    }
}

fn normalize_key(raw: &str) -> String {
    raw.trim()
        .trim_start_matches(['-', '*', '#', '>', ' '])
        .trim_matches('*')
        .trim()
        .to_lowercase()
        .replace(['/', ' ', '-'], "_")
}

/// Splits `key: value` (ASCII or full-width colon).
fn split_key_value(line: &str) -> Option<(String, &str)> {
    let idx = line.find([':', '：'])?;
    let sep_len = line[idx..].chars().next().map_or(1, char::len_utf8);
    let key = normalize_key(&line[..idx]);
    (!key.is_empty()).then(|| (key, &line[idx + sep_len..]))
}

/// Lines of the last block opened by `sentinel`, if any.
fn block_lines<'a>(text: &'a str, sentinel: &str) -> Option<Vec<&'a str>> {
    let lines: Vec<&str> = text.lines().collect();
    let start = lines
        .iter()
        .rposition(|l| l.trim().trim_matches(['*', '`', '#']).trim() == sentinel)?;
    Some(
        lines[start + 1..]
            .iter()
            .take_while(|l| !l.trim().is_empty())
            .copied()
            .collect(),
    )
}

fn parse_fraction(raw: &str) -> Option<f64> {
    let t = raw.trim();
    let (num, percent) = match t.strip_suffix('%') {
        Some(n) => (n.trim(), true),
        None => (t, false),
    };
    let v: f64 = num.parse().ok()?;
    if !v.is_finite() || v < 0.0 {
        return None;
    }
    let v = if percent || (v > 1.0 && v <= 100.0) { v / 100.0 } else { v };
    (v <= 1.0).then_some(v)
}

/// Parses a decimal degree value, honoring an optional hemisphere suffix.
fn parse_degree(raw: &str) -> Option<f64> {
    let t = raw.trim().trim_end_matches('°').trim();
    let (num, negate) = match t.chars().last() {
        Some(c @ ('N' | 'S' | 'E' | 'W' | 'n' | 's' | 'e' | 'w')) => {
            let body = t[..t.len() - 1].trim().trim_end_matches('°').trim();
            (body, matches!(c, 'S' | 'W' | 's' | 'w'))
        }
        _ => (t, false),
    };
    let v: f64 = num.parse().ok()?;
    v.is_finite().then_some(if negate { -v.abs() } else { v })
}

fn parse_clue(raw: &str) -> Option<Clue> {
    let parts: Vec<&str> = raw.splitn(3, '|').map(str::trim).collect();
    let (category, salience, description) = match parts.as_slice() {
        [cat, sal, desc] => (
            cat.parse().unwrap_or(ClueCategory::Other),
            parse_fraction(sal).unwrap_or(DEFAULT_SALIENCE),
            *desc,
        ),
        [cat, desc] => match cat.parse() {
            Ok(c) => (c, DEFAULT_SALIENCE, *desc),
            Err(()) => (ClueCategory::Other, DEFAULT_SALIENCE, raw.trim()),
        },
        _ => (ClueCategory::Other, DEFAULT_SALIENCE, raw.trim()),
    };
    Clue::new(category, description, salience).ok()
}

/// Raw fields collected from either parse path before validation.
#[derive(Default)]
struct Fields {
    levels: [Option<String>; 4],
    place_name: Option<String>,
    lat: Option<String>,
    lon: Option<String>,
    confidence: Option<String>,
    clues: Vec<Clue>,
    inconsistencies: Vec<String>,
    explicit_unknown: bool,
}

impl Fields {
    fn has_location(&self) -> bool {
        self.levels.iter().any(Option::is_some)
            || self.place_name.is_some()
            || (self.lat.is_some() && self.lon.is_some())
    }

    fn set(&mut self, key: &str, value: &str) {
        let value = sanitize(value);
        let value = value.as_str();
        match key {
            "country" => self.levels[0] = clean_value(value),
            "state" => self.levels[1] = clean_value(value),
            "city_town" => self.levels[2] = clean_value(value),
            "street" => self.levels[3] = clean_value(value),
            "place_name" => self.place_name = clean_value(value),
            "lat" => self.lat = clean_value(value),
            "lon" => self.lon = clean_value(value),
            "coordinates" => {
                if let Some((a, b)) = value.split_once(',') {
                    self.lat = clean_value(a);
                    self.lon = clean_value(b);
                }
            }
            "confidence" => self.confidence = clean_value(value),
            "clue" => {
                if let Some(c) = parse_clue(value) {
                    self.clues.push(c);
                }
            }
            "inconsistency" => {
                let v = value.trim();
                if !v.is_empty() {
                    self.inconsistencies.push(v.to_string());
                }
            }
            "granularity" => {
                self.explicit_unknown =
                    value.parse::<GeoGranularity>() == Ok(GeoGranularity::Unknown);
            }
            _ => {}
        }
    }

    fn into_guess(self, path: ParsePath) -> GeoGuess {
        let [country, state, city_town, street] = self.levels;
        // Text was cleaned line-by-line, so truncation cannot fail on content.
        let (admin, dropped) =
            AdminPath::truncated(country, state, city_town, street).unwrap_or_default();
        let mut b = GeoGuess::builder()
            .admin(admin)
            .raw_response_ref(RawResponseRef {
                response_id: None,
                parsed_via: Some(path),
            });
        if let Some(p) = self.place_name {
            b = b.place_name(p);
        }
        match (
            self.lat.as_deref().and_then(parse_degree),
            self.lon.as_deref().and_then(parse_degree),
        ) {
            (Some(lat), Some(lon)) => match Coordinates::new(lat, lon) {
                Ok(c) => b = b.coordinates(c),
                Err(e) => b = b.inconsistency(format!("discarded coordinates: {e}")),
            },
            (None, None) => {}
            _ => b = b.inconsistency("discarded incomplete coordinates"),
        }
        let confidence = self
            .confidence
            .as_deref()
            .and_then(parse_fraction)
            .unwrap_or(DEFAULT_CONFIDENCE);
        b = b.confidence(confidence);
        for clue in self.clues {
            b = b.clue(clue);
        }
        for d in dropped {
            let text = format!("unanchored {}: {}", d.level, d.value);
            if let Ok(c) = Clue::new(ClueCategory::Other, text, DEMOTED_SALIENCE) {
                b = b.clue(c);
            }
        }
        for f in self.inconsistencies {
            b = b.inconsistency(f);
        }
        b.build().unwrap_or_default()
    }
}

fn heuristic_key(label: &str) -> Option<&'static str> {
    let key = match label {
        "country" | "nation" | "国家" | "国" => "country",
        "state" | "province" | "region" | "prefecture" | "state_province" | "省" | "省份"
        | "州" | "地区" | "省_州" => "state",
        "city" | "town" | "city_town" | "city_or_town" | "municipality" | "城市" | "市" => {
            "city_town"
        }
        "street" | "road" | "street_address" | "street_name" | "街道" | "道路" => "street",
        "place" | "place_name" | "landmark" | "location_name" | "地点" | "地标" => "place_name",
        "coordinates" | "coords" | "gps" | "gps_coordinates" | "坐标" => "coordinates",
        "latitude" | "lat" | "纬度" => "lat",
        "longitude" | "lon" | "lng" | "经度" => "lon",
        "confidence" | "置信度" => "confidence",
        _ => return None,
    };
    Some(key)
}

fn strict_fields(lines: &[&str]) -> Fields {
    let mut fields = Fields::default();
    for line in lines {
        if let Some((key, value)) = split_key_value(line) {
            fields.set(&key, value);
        }
    }
    fields
}

fn heuristic_fields(text: &str) -> Fields {
    let mut fields = Fields::default();
    for line in text.lines() {
        let Some((label, value)) = split_key_value(line) else {
            continue;
        };
        let value = value.trim().trim_end_matches(['.', ';', '。']);
        if value.chars().count() > MAX_HEURISTIC_VALUE_LEN {
            continue;
        }
        if let Some(key) = heuristic_key(&label) {
            fields.set(key, value);
        }
    }
    fields
}

/// Parses a guess from model output.
///
/// The strict block wins when present. A block that carries no location
/// but declares `granularity: unknown` yields an unknown guess.
pub fn parse_guess(text: &str) -> Result<GeoGuess, ParseError> {
    if let Some(lines) = block_lines(text, RESULT_SENTINEL) {
        let fields = strict_fields(&lines);
        if fields.has_location() || fields.explicit_unknown {
            return Ok(fields.into_guess(ParsePath::Block));
        }
    }
    let fields = heuristic_fields(text);
    if fields.has_location() {
        Ok(fields.into_guess(ParsePath::Heuristic))
    } else {
        Err(ParseError::NoLocation)
    }
}

/// Canonical block text for a guess.
///
/// Admin values equal to a "don't know" placeholder (such as `unknown`) are
/// read back as absent.
pub fn render_guess_block(guess: &GeoGuess) -> String {
    let mut out = String::new();
    out.push_str(RESULT_SENTINEL);
    out.push('\n');
    let _ = writeln!(out, "granularity: {}", guess.granularity());
    for level in GeoGranularity::LEVELS {
        if let Some(v) = guess.admin().level(level) {
            let _ = writeln!(out, "{}: {}", level.as_str(), v);
        }
    }
    if let Some(p) = guess.place_name() {
        let _ = writeln!(out, "place_name: {p}");
    }
    if let Some(c) = guess.coordinates() {
        let _ = writeln!(out, "lat: {}", c.lat());
        let _ = writeln!(out, "lon: {}", c.lon());
    }
    let _ = writeln!(out, "confidence: {}", guess.confidence());
    for c in guess.clues() {
        let _ = writeln!(
            out,
            "clue: {} | {} | {}",
            c.category(),
            c.salience(),
            c.description()
        );
    }
    for f in guess.inconsistency_flags() {
        let _ = writeln!(out, "inconsistency: {f}");
    }
    out
}

fn parse_age_bound(raw: &str) -> Result<Option<u8>, ParseError> {
    let Some(v) = clean_value(raw) else {
        return Ok(None);
    };
    let digits: String = v.chars().take_while(char::is_ascii_digit).collect();
    digits
        .parse::<u8>()
        .map(Some)
        .map_err(|_| ParseError::InvalidProfile(format!("age {v:?} is not a number")))
}

fn parse_gender(raw: &str) -> Option<Gender> {
    let v = clean_value(raw)?;
    let n = normalize_place_name(&v);
    let first = n.split(' ').next().unwrap_or_default();
    Some(match first {
        "female" | "woman" | "f" | "女" | "女性" => Gender::Female,
        "male" | "man" | "m" | "男" | "男性" => Gender::Male,
        _ => Gender::Unspecified,
    })
}

#[derive(Default)]
struct ProfileFields {
    location: Option<String>,
    age_low: Option<u8>,
    age_high: Option<u8>,
    gender: Option<Gender>,
    confidence: Option<f64>,
    clues: Vec<Clue>,
    any: bool,
}

impl ProfileFields {
    fn set(&mut self, key: &str, value: &str) -> Result<(), ParseError> {
        let value = sanitize(value);
        let value = value.as_str();
        match key {
            "location" | "location_summary" | "位置" | "地点" => {
                self.location = clean_value(value)
            }
            "age_low" => self.age_low = parse_age_bound(value)?,
            "age_high" => self.age_high = parse_age_bound(value)?,
            "age" | "age_range" | "年龄" => {
                let mut parts = value.split(['-', '–', '~', '到']);
                self.age_low = parse_age_bound(parts.next().unwrap_or_default())?;
                self.age_high = match parts.next() {
                    Some(p) => parse_age_bound(p)?,
                    None => self.age_low,
                };
            }
            "gender" | "sex" | "性别" => self.gender = parse_gender(value),
            "confidence" | "置信度" => self.confidence = parse_fraction(value),
            "clue" => {
                if let Some(c) = parse_clue(value) {
                    self.clues.push(c);
                }
            }
            _ => return Ok(()),
        }
        self.any = true;
        Ok(())
    }

    fn into_profile(self) -> Result<PersonaProfile, ParseError> {
        let location_summary = self
            .location
            .ok_or_else(|| ParseError::InvalidProfile("profile has no location".into()))?;
        let age_range = match (self.age_low, self.age_high) {
            (None, None) => None,
            (low, high) => {
                let low = low.or(high).unwrap_or_default();
                let high = high.unwrap_or(low);
                Some(
                    AgeRange::new(low, high)
                        .map_err(|e| ParseError::InvalidProfile(e.to_string()))?,
                )
            }
        };
        Ok(PersonaProfile {
            location_summary,
            age_range,
            gender: self.gender,
            confidence: self.confidence.unwrap_or(DEFAULT_CONFIDENCE),
            supporting_clues: self.clues,
        })
    }
}

/// Parses a persona profile from model output.
pub fn parse_profile(text: &str) -> Result<PersonaProfile, ParseError> {
    let mut fields = ProfileFields::default();
    match block_lines(text, PROFILE_SENTINEL) {
        Some(lines) => {
            for line in lines {
                if let Some((k, v)) = split_key_value(line) {
                    fields.set(&k, v)?;
                }
            }
        }
        None => {
            for line in text.lines() {
                if let Some((k, v)) = split_key_value(line) {
                    if v.chars().count() <= MAX_HEURISTIC_VALUE_LEN {
                        fields.set(&k, v.trim().trim_end_matches(['.', '。']))?;
                    }
                }
            }
            if !fields.any {
                return Err(ParseError::NoProfile);
            }
        }
    }
    fields.into_profile()
}

/// Canonical profile block text.
pub fn render_profile_block(profile: &PersonaProfile) -> String {
    let mut out = format!("{PROFILE_SENTINEL}\nlocation: {}\n", profile.location_summary);
    if let Some(r) = profile.age_range {
        let _ = writeln!(out, "age_low: {}\nage_high: {}", r.low(), r.high());
    }
    if let Some(g) = profile.gender {
        let g = match g {
            Gender::Female => "female",
            Gender::Male => "male",
            Gender::Unspecified => "unspecified",
        };
        let _ = writeln!(out, "gender: {g}");
    }
    let _ = writeln!(out, "confidence: {}", profile.confidence);
    for c in &profile.supporting_clues {
        let _ = writeln!(out, "clue: {} | {} | {}", c.category(), c.salience(), c.description());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_block_parses_to_street() {
        let text = "Analysis follows.\n\nGEOLOCATOR-RESULT\ncountry: United States\nstate: California\ncity_town: Los Angeles\nstreet: Figueroa St\nlat: 34.0224\nlon: -118.2851\nconfidence: 0.8\nclue: signage | 0.9 | street sign reads Figueroa\n";
        let g = parse_guess(text).unwrap();
        assert_eq!(g.granularity(), GeoGranularity::Street);
        assert_eq!(g.street(), Some("Figueroa St"));
        assert_eq!(g.coordinates().unwrap().lat(), 34.0224);
        assert_eq!(g.confidence(), 0.8);
        assert_eq!(g.clues()[0].category(), ClueCategory::Signage);
        assert_eq!(g.raw_response_ref().parsed_via, Some(ParsePath::Block));
    }

    #[test]
    fn gap_caps_granularity_and_demotes() {
        let g = parse_guess("GEOLOCATOR-RESULT\ncountry: Japan\ncity_town: Osaka\n").unwrap();
        assert_eq!(g.granularity(), GeoGranularity::Country);
        assert!(g.city_town().is_none());
        assert!(g
            .clues()
            .iter()
            .any(|c| c.description().contains("city_town") && c.description().contains("Osaka")));
    }

    #[test]
    fn no_location_is_error() {
        assert_eq!(
            parse_guess("I cannot determine the location."),
            Err(ParseError::NoLocation)
        );
        assert_eq!(parse_guess(""), Err(ParseError::NoLocation));
    }

    #[test]
    fn duplicate_keys_last_wins_unknown_keys_ignored() {
        let g = parse_guess("GEOLOCATOR-RESULT\ncountry: France\nmood: sunny\ncountry: Japan\n").unwrap();
        assert_eq!(g.country(), Some("Japan"));
    }

    #[test]
    fn block_ends_at_blank_line() {
        let g = parse_guess("GEOLOCATOR-RESULT\ncountry: Japan\n\nstate: Tokyo\n").unwrap();
        assert_eq!(g.granularity(), GeoGranularity::Country);
    }

    #[test]
    fn placeholders_are_absent() {
        let g = parse_guess("GEOLOCATOR-RESULT\ncountry: Japan\nstate: unknown\ncity_town: N/A\n").unwrap();
        assert_eq!(g.granularity(), GeoGranularity::Country);
        assert!(g.clues().is_empty());
    }

    #[test]
    fn out_of_range_coordinates_are_flagged() {
        let g = parse_guess("GEOLOCATOR-RESULT\ncountry: Japan\nlat: 95\nlon: 10\n").unwrap();
        assert!(g.coordinates().is_none());
        assert_eq!(g.inconsistency_flags().len(), 1);
    }

    #[test]
    fn heuristic_fallback() {
        let text = "Here is my analysis:\n- **Country:** Taiwan\n- **City:** Taipei.\n- Coordinates: 25.0339, 121.5645\n";
        let g = parse_guess(text).unwrap();
        assert_eq!(g.country(), Some("Taiwan"));
        // no state, so the city is demoted
        assert_eq!(g.granularity(), GeoGranularity::Country);
        assert_eq!(g.coordinates().unwrap().lon(), 121.5645);
        assert_eq!(g.raw_response_ref().parsed_via, Some(ParsePath::Heuristic));
    }

    #[test]
    fn heuristic_fallback_zh_labels() {
        let g = parse_guess("国家：中国\n省份：四川\n城市：成都\n").unwrap();
        assert_eq!(g.granularity(), GeoGranularity::CityTown);
        assert_eq!(g.city_town(), Some("成都"));
    }

    #[test]
    fn unknown_block_round_trips() {
        let text = render_guess_block(&GeoGuess::unknown());
        assert!(text.starts_with("GEOLOCATOR-RESULT\ngranularity: unknown\n"));
        assert!(!text.contains("country:"));
        let back = parse_guess(&text).unwrap();
        assert!(back.same_content(&GeoGuess::unknown()));
    }

    #[test]
    fn street_block_renders_all_keys() {
        let g = GeoGuess::builder()
            .country("Taiwan")
            .state("Taipei")
            .city_town("Xinyi District")
            .street("Xinyi Rd Sec 5")
            .place_name("Taipei 101")
            .coordinates(Coordinates::new(25.0339, 121.5645).unwrap())
            .build()
            .unwrap();
        let text = render_guess_block(&g);
        for key in ["country:", "state:", "city_town:", "street:", "place_name:", "lat:", "lon:"] {
            assert!(text.contains(key), "{key}");
        }
        assert!(parse_guess(&text).unwrap().same_content(&g));
    }

    #[test]
    fn profile_block() {
        let p = parse_profile(
            "GEOLOCATOR-PROFILE\nlocation: Los Angeles\nage_low: 20\nage_high: 30\ngender: female\n",
        )
        .unwrap();
        assert_eq!(p.location_summary, "Los Angeles");
        assert_eq!(p.age_range, Some(AgeRange::new(20, 30).unwrap()));
        assert_eq!(p.gender, Some(Gender::Female));
        assert_eq!(parse_profile(&render_profile_block(&p)).unwrap(), p);
    }

    #[test]
    fn profile_optional_fields() {
        let p = parse_profile("GEOLOCATOR-PROFILE\nlocation: Los Angeles\n").unwrap();
        assert_eq!(p.age_range, None);
        assert_eq!(p.gender, None);
    }

    #[test]
    fn profile_inverted_age_is_error() {
        let err = parse_profile("GEOLOCATOR-PROFILE\nlocation: LA\nage_low: 40\nage_high: 20\n")
            .unwrap_err();
        assert!(matches!(err, ParseError::InvalidProfile(_)));
    }

    #[test]
    fn profile_heuristic_and_missing() {
        let p = parse_profile("Location: Chengdu\nAge: 25-35\nGender: male\n").unwrap();
        assert_eq!(p.age_range.unwrap().high(), 35);
        assert_eq!(parse_profile("nothing useful"), Err(ParseError::NoProfile));
    }
}
