//! Instruction and request construction.
//!
//! Template text lives in `templates/<lang>/prompt.toml`. The built-in set
//! is compiled in; [`PromptEngine::from_dir`] loads replacements from disk.
//! The machine-readable block skeletons are generated here from the parser
//! constants so every language shares the same output contract.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ClueCategory, EvidenceBundle, GeoGuess, ImageEvidence, Language};
use crate::parser::{render_guess_block, PROFILE_SENTINEL, RESULT_SENTINEL};

pub const DEFAULT_MAX_ATTACHMENTS: usize = 8;

const BUILTIN_EN: &str = include_str!("../templates/en/prompt.toml");
const BUILTIN_ZH: &str = include_str!("../templates/zh/prompt.toml");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("unsupported language {0:?}")]
    UnsupportedLanguage(String),
    #[error("{count} attachments exceed the limit of {limit}")]
    TooManyAttachments { count: usize, limit: usize },
    #[error("evidence bundle is empty")]
    EmptyEvidence,
    #[error("invalid prompt config: {0}")]
    InvalidConfig(String),
    #[error("template {path}: {message}")]
    Template { path: String, message: String },
}

/// Check-list order used when no explicit focus is configured.
pub const DEFAULT_CLUE_FOCUS: [ClueCategory; 10] = [
    ClueCategory::Exif,
    ClueCategory::TrafficRules,
    ClueCategory::Signage,
    ClueCategory::LanguageScript,
    ClueCategory::Architecture,
    ClueCategory::Vegetation,
    ClueCategory::Climate,
    ClueCategory::Landmark,
    ClueCategory::Infrastructure,
    ClueCategory::Other,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptConfig {
    pub persona_domains: Vec<String>,
    pub clue_focus: Vec<ClueCategory>,
    pub require_structured_block: bool,
    /// Adds the self-verification sentence to the instructions.
    pub self_verify: bool,
    pub language: Language,
    pub max_attachments: usize,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            persona_domains: vec![
                "OSINT frameworks".into(),
                "criminology".into(),
                "geography".into(),
            ],
            clue_focus: DEFAULT_CLUE_FOCUS.to_vec(),
            require_structured_block: true,
            self_verify: true,
            language: Language::En,
            max_attachments: DEFAULT_MAX_ATTACHMENTS,
        }
    }
}

impl PromptConfig {
    pub fn with_language(mut self, language: Language) -> Self {
        self.language = language;
        self
    }

    /// Sets the language from a tag such as `"en"` or `"zh"`.
    pub fn with_language_tag(self, tag: &str) -> Result<Self, PromptError> {
        let language = tag
            .parse()
            .map_err(|_| PromptError::UnsupportedLanguage(tag.to_string()))?;
        Ok(self.with_language(language))
    }

    fn validate(&self) -> Result<(), PromptError> {
        if self.persona_domains.iter().all(|d| d.trim().is_empty()) {
            return Err(PromptError::InvalidConfig("persona_domains is empty".into()));
        }
        if self.max_attachments == 0 {
            return Err(PromptError::InvalidConfig("max_attachments must be > 0".into()));
        }
        Ok(())
    }
}

/// A fully built request for the multimodal backend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LmmRequest {
    pub system_instructions: String,
    pub user_text: String,
    #[serde(with = "attachments_b64")]
    pub attachments: Vec<Vec<u8>>,
    pub language: Language,
}

mod attachments_b64 {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[Vec<u8>], s: S) -> Result<S::Ok, S::Error> {
        v.iter()
            .map(|b| STANDARD.encode(b))
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<u8>>, D::Error> {
        Vec::<String>::deserialize(d)?
            .into_iter()
            .map(|s| STANDARD.decode(s).map_err(serde::de::Error::custom))
            .collect()
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct TemplateSet {
    pub version: u32,
    persona: String,
    domain_separator: String,
    domain_last_separator: String,
    task: String,
    clue_intro: String,
    reasoning: String,
    misleading: String,
    verification: String,
    contract_intro: String,
    contract_rules: String,
    image_only: String,
    text_intro: String,
    text_label: String,
    hint_label: String,
    exif_label: String,
    exif_gps: String,
    exif_time: String,
    exif_camera: String,
    image_word: String,
    refine_intro: String,
    prior_label: String,
    new_evidence_label: String,
    new_images: String,
    profile_request: String,
    profile_contract_intro: String,
    profile_contract_rules: String,
    clues: HashMap<ClueCategory, String>,
    #[serde(default)]
    domain_names: HashMap<String, String>,
}

impl TemplateSet {
    pub fn parse(source: &str, origin: &str) -> Result<Self, PromptError> {
        let set: TemplateSet = toml::from_str(source).map_err(|e| PromptError::Template {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        if let Some(missing) = ClueCategory::ALL.iter().find(|c| !set.clues.contains_key(c)) {
            return Err(PromptError::Template {
                path: origin.to_string(),
                message: format!("missing clue line for {missing}"),
            });
        }
        Ok(set)
    }

    fn domains(&self, domains: &[String]) -> String {
        let names: Vec<&str> = domains
            .iter()
            .map(|d| d.trim())
            .filter(|d| !d.is_empty())
            .map(|d| self.domain_names.get(d).map(String::as_str).unwrap_or(d))
            .collect();
        match names.as_slice() {
            [] => String::new(),
            [one] => one.to_string(),
            [init @ .., last] => format!(
                "{}{}{}",
                init.join(&self.domain_separator),
                self.domain_last_separator,
                last
            ),
        }
    }
}

/// Rendered templates for every supported language.
#[derive(Debug, Clone)]
pub struct PromptEngine {
    templates: HashMap<Language, TemplateSet>,
}

fn builtin() -> &'static PromptEngine {
    static ENGINE: OnceLock<PromptEngine> = OnceLock::new();
    ENGINE.get_or_init(|| {
        let mut templates = HashMap::new();
        templates.insert(
            Language::En,
            TemplateSet::parse(BUILTIN_EN, "builtin:en").expect("built-in en template"),
        );
        templates.insert(
            Language::Zh,
            TemplateSet::parse(BUILTIN_ZH, "builtin:zh").expect("built-in zh template"),
        );
        PromptEngine { templates }
    })
}

impl Default for PromptEngine {
    fn default() -> Self {
        builtin().clone()
    }
}

impl PromptEngine {
    pub fn builtin() -> &'static PromptEngine {
        builtin()
    }

    /// Loads `<dir>/<lang>/prompt.toml` for every language directory present.
    /// Languages without a directory keep the built-in template.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut engine = PromptEngine::default();
        for lang in Language::ALL {
            let path = dir.join(lang.tag()).join("prompt.toml");
            if path.exists() {
                let source = std::fs::read_to_string(&path).map_err(|e| PromptError::Template {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?;
                engine
                    .templates
                    .insert(lang, TemplateSet::parse(&source, &path.display().to_string())?);
            }
        }
        Ok(engine)
    }

    /// Keeps only the given languages; used to model partial template sets.
    pub fn restricted_to(mut self, languages: &[Language]) -> Self {
        self.templates.retain(|l, _| languages.contains(l));
        self
    }

    fn templates(&self, language: Language) -> Result<&TemplateSet, PromptError> {
        self.templates
            .get(&language)
            .ok_or_else(|| PromptError::UnsupportedLanguage(language.tag().to_string()))
    }

    /// System instructions: persona, task, clue checklist, reasoning
    /// directive, misleading-input caution and the output block contract.
    pub fn build_instructions(&self, config: &PromptConfig) -> Result<String, PromptError> {
        config.validate()?;
        let t = self.templates(config.language)?;
        let mut out = String::new();
        out.push_str(&t.persona.replace("{domains}", &t.domains(&config.persona_domains)));
        out.push_str("\n\n");
        out.push_str(&t.task);
        out.push_str("\n\n");
        out.push_str(&t.clue_intro);
        out.push('\n');
        let focus: &[ClueCategory] = if config.clue_focus.is_empty() {
            &DEFAULT_CLUE_FOCUS
        } else {
            &config.clue_focus
        };
        for category in focus {
            let _ = writeln!(out, "- {}", t.clues[category]);
        }
        out.push('\n');
        out.push_str(&t.reasoning);
        out.push_str("\n\n");
        out.push_str(&t.misleading);
        out.push('\n');
        if config.self_verify {
            out.push('\n');
            out.push_str(&t.verification);
            out.push('\n');
        }
        if config.require_structured_block {
            out.push('\n');
            out.push_str(&t.contract_intro);
            out.push_str("\n\n");
            out.push_str(&result_block_skeleton());
            out.push('\n');
            let categories = ClueCategory::ALL
                .iter()
                .map(|c| c.as_str())
                .collect::<Vec<_>>()
                .join(", ");
            out.push_str(&t.contract_rules.replace("{categories}", &categories));
            out.push('\n');
        }
        Ok(out)
    }

    /// First-round request: every image attached in order, texts and hints
    /// appended under labeled delimiters.
    pub fn build_inference_request(
        &self,
        bundle: &EvidenceBundle,
        config: &PromptConfig,
    ) -> Result<LmmRequest, PromptError> {
        let config = &config.clone().with_language(bundle.prompt_language);
        if bundle.is_empty() {
            return Err(PromptError::EmptyEvidence);
        }
        let attachments = attachments(bundle, config)?;
        let t = self.templates(config.language)?;
        let mut user_text = String::new();
        if bundle.has_post_text() || !bundle.hints.is_empty() {
            if !bundle.images.is_empty() {
                user_text.push_str(&t.image_only);
            } else {
                user_text.push_str(&t.text_intro);
            }
            user_text.push('\n');
            push_texts(&mut user_text, t, bundle);
        } else {
            user_text.push_str(&t.image_only);
            user_text.push('\n');
        }
        push_exif(&mut user_text, t, &bundle.images);
        Ok(LmmRequest {
            system_instructions: self.build_instructions(config)?,
            user_text,
            attachments,
            language: config.language,
        })
    }

    /// Follow-up request that embeds the prior guess and asks for a refinement.
    pub fn build_refinement_request(
        &self,
        prior_guess: &GeoGuess,
        new_evidence: &EvidenceBundle,
        config: &PromptConfig,
    ) -> Result<LmmRequest, PromptError> {
        self.build_transcript_refinement_request(std::slice::from_ref(prior_guess), new_evidence, config)
    }

    /// Like [`build_refinement_request`](Self::build_refinement_request) but
    /// embeds every earlier guess, oldest first.
    pub fn build_transcript_refinement_request(
        &self,
        history: &[GeoGuess],
        new_evidence: &EvidenceBundle,
        config: &PromptConfig,
    ) -> Result<LmmRequest, PromptError> {
        let config = &config.clone().with_language(new_evidence.prompt_language);
        if new_evidence.is_empty() {
            return Err(PromptError::EmptyEvidence);
        }
        let attachments = attachments(new_evidence, config)?;
        let t = self.templates(config.language)?;
        let mut user_text = String::new();
        user_text.push_str(&t.refine_intro);
        user_text.push('\n');
        for (i, guess) in history.iter().enumerate() {
            if history.len() > 1 {
                let _ = writeln!(user_text, "\n=== {} {} ===", t.prior_label, i + 1);
            } else {
                let _ = writeln!(user_text, "\n=== {} ===", t.prior_label);
            }
            user_text.push_str(&render_guess_block(guess));
        }
        let _ = writeln!(user_text, "\n=== {} ===", t.new_evidence_label);
        if !new_evidence.images.is_empty() {
            user_text.push_str(
                &t.new_images
                    .replace("{count}", &new_evidence.images.len().to_string()),
            );
            user_text.push('\n');
        }
        push_texts(&mut user_text, t, new_evidence);
        push_exif(&mut user_text, t, &new_evidence.images);
        Ok(LmmRequest {
            system_instructions: self.build_instructions(config)?,
            user_text,
            attachments,
            language: config.language,
        })
    }

    /// Request asking for the poster's location, age and gender.
    pub fn build_profile_request(
        &self,
        bundle: &EvidenceBundle,
        config: &PromptConfig,
    ) -> Result<LmmRequest, PromptError> {
        let config = &config.clone().with_language(bundle.prompt_language);
        if !bundle.has_post_text() {
            return Err(PromptError::EmptyEvidence);
        }
        let attachments = attachments(bundle, config)?;
        let t = self.templates(config.language)?;
        let mut user_text = String::new();
        user_text.push_str(&t.profile_request);
        user_text.push_str("\n\n");
        user_text.push_str(&t.profile_contract_intro);
        user_text.push_str("\n\n");
        user_text.push_str(&profile_block_skeleton());
        user_text.push('\n');
        user_text.push_str(&t.profile_contract_rules);
        user_text.push('\n');
        push_texts(&mut user_text, t, bundle);
        push_exif(&mut user_text, t, &bundle.images);
        Ok(LmmRequest {
            system_instructions: self.build_instructions(config)?,
            user_text,
            attachments,
            language: config.language,
        })
    }
}

fn attachments(bundle: &EvidenceBundle, config: &PromptConfig) -> Result<Vec<Vec<u8>>, PromptError> {
    if bundle.images.len() > config.max_attachments {
        return Err(PromptError::TooManyAttachments {
            count: bundle.images.len(),
            limit: config.max_attachments,
        });
    }
    Ok(bundle.images.iter().map(|i| i.bytes.clone()).collect())
}

fn push_texts(out: &mut String, t: &TemplateSet, bundle: &EvidenceBundle) {
    let sections = [(&t.text_label, &bundle.texts), (&t.hint_label, &bundle.hints)];
    for (label, items) in sections {
        let items: Vec<&String> = items.iter().filter(|s| !s.trim().is_empty()).collect();
        for (i, item) in items.iter().enumerate() {
            if items.len() > 1 {
                let _ = writeln!(out, "\n=== {label} {} ===", i + 1);
            } else {
                let _ = writeln!(out, "\n=== {label} ===");
            }
            out.push_str(item.trim());
            out.push('\n');
        }
    }
}

fn push_exif(out: &mut String, t: &TemplateSet, images: &[ImageEvidence]) {
    for (i, image) in images.iter().enumerate() {
        let Some(exif) = &image.exif else { continue };
        let mut lines = Vec::new();
        if let Some(gps) = exif.gps {
            lines.push(format!("{}: {}, {}", t.exif_gps, gps.lat(), gps.lon()));
        }
        if let Some(ts) = exif.timestamp {
            lines.push(format!("{}: {}", t.exif_time, ts.format("%Y-%m-%d %H:%M:%S")));
        }
        let camera: Vec<&str> = [exif.camera_make.as_deref(), exif.camera_model.as_deref()]
            .into_iter()
            .flatten()
            .collect();
        if !camera.is_empty() {
            lines.push(format!("{}: {}", t.exif_camera, camera.join(" ")));
        }
        if lines.is_empty() {
            continue;
        }
        let _ = writeln!(out, "\n=== {} ({} {}) ===", t.exif_label, t.image_word, i + 1);
        for l in lines {
            out.push_str(&l);
            out.push('\n');
        }
    }
}

/// The result block skeleton shown to the model.
pub fn result_block_skeleton() -> String {
    format!(
        "{RESULT_SENTINEL}\n\
         country: <country>\n\
         state: <state, province or region>\n\
         city_town: <city or town>\n\
         street: <street>\n\
         place_name: <building, landmark or place name>\n\
         lat: <decimal latitude>\n\
         lon: <decimal longitude>\n\
         confidence: <number between 0 and 1>\n\
         clue: <category> | <salience between 0 and 1> | <what you observed>\n\
         inconsistency: <conflict between user input and the evidence>\n"
    )
}

pub fn profile_block_skeleton() -> String {
    format!(
        "{PROFILE_SENTINEL}\n\
         location: <where the poster is or lives>\n\
         age_low: <youngest plausible age>\n\
         age_high: <oldest plausible age>\n\
         gender: <female | male | unspecified>\n\
         confidence: <number between 0 and 1>\n"
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(byte: u8) -> ImageEvidence {
        ImageEvidence {
            name: format!("img{byte}.jpg"),
            bytes: vec![byte; 4],
            exif: None,
        }
    }

    #[test]
    fn default_instructions_carry_anchors() {
        let text = PromptEngine::builtin()
            .build_instructions(&PromptConfig::default())
            .unwrap();
        for needle in ["OSINT", "step-by-step", "EXIF", "GEOLOCATOR-RESULT", "misleading", "every detail"] {
            assert!(text.contains(needle), "missing {needle}");
        }
        assert!(text.contains("OSINT frameworks, criminology and geography"));
    }

    #[test]
    fn zh_instructions_keep_contract() {
        let cfg = PromptConfig::default().with_language(Language::Zh);
        let text = PromptEngine::builtin().build_instructions(&cfg).unwrap();
        assert!(text.contains(RESULT_SENTINEL));
        assert!(text.contains("犯罪学"));
        assert_ne!(
            text,
            PromptEngine::builtin()
                .build_instructions(&PromptConfig::default())
                .unwrap()
        );
    }

    #[test]
    fn unknown_language_tag() {
        assert!(matches!(
            PromptConfig::default().with_language_tag("xx"),
            Err(PromptError::UnsupportedLanguage(_))
        ));
        let engine = PromptEngine::default().restricted_to(&[Language::En]);
        let cfg = PromptConfig::default().with_language(Language::Zh);
        assert!(matches!(
            engine.build_instructions(&cfg),
            Err(PromptError::UnsupportedLanguage(_))
        ));
    }

    #[test]
    fn no_block_contract_when_disabled() {
        let cfg = PromptConfig {
            require_structured_block: false,
            ..Default::default()
        };
        let text = PromptEngine::builtin().build_instructions(&cfg).unwrap();
        assert!(!text.contains(RESULT_SENTINEL));
    }

    #[test]
    fn image_only_request() {
        let bundle = EvidenceBundle::default().with_image(image(1));
        let req = PromptEngine::builtin()
            .build_inference_request(&bundle, &PromptConfig::default())
            .unwrap();
        assert_eq!(req.attachments, vec![vec![1u8; 4]]);
        assert_eq!(req.user_text, "Please analyze the attached image(s) and infer where they were taken.\n");
    }

    #[test]
    fn hint_is_delimited() {
        let bundle = EvidenceBundle::default()
            .with_image(image(1))
            .with_hint("this is a university in Los Angeles");
        let req = PromptEngine::builtin()
            .build_inference_request(&bundle, &PromptConfig::default())
            .unwrap();
        assert!(req
            .user_text
            .contains("=== USER HINT ===\nthis is a university in Los Angeles\n"));
    }

    #[test]
    fn attachment_limit() {
        let mut bundle = EvidenceBundle::default();
        for i in 0..9 {
            bundle = bundle.with_image(image(i));
        }
        assert!(matches!(
            PromptEngine::builtin().build_inference_request(&bundle, &PromptConfig::default()),
            Err(PromptError::TooManyAttachments { count: 9, limit: 8 })
        ));
    }

    #[test]
    fn refinement_embeds_prior_guess() {
        let prior = GeoGuess::builder()
            .country("Taiwan")
            .state("Taipei")
            .city_town("Taipei")
            .build()
            .unwrap();
        let engine = PromptEngine::builtin();
        let cfg = PromptConfig::default();
        let req = engine
            .build_refinement_request(&prior, &EvidenceBundle::default().with_image(image(2)), &cfg)
            .unwrap();
        assert!(req.user_text.contains(&render_guess_block(&prior)));
        assert!(req.user_text.contains("Refine"));
        assert_eq!(req.attachments.len(), 1);

        let text_only = engine
            .build_refinement_request(&prior, &EvidenceBundle::default().with_hint("near Xinyi Rd"), &cfg)
            .unwrap();
        assert!(text_only.attachments.is_empty());

        assert!(matches!(
            engine.build_refinement_request(&prior, &EvidenceBundle::default(), &cfg),
            Err(PromptError::EmptyEvidence)
        ));
    }

    #[test]
    fn profile_request_requires_post_text() {
        let engine = PromptEngine::builtin();
        let cfg = PromptConfig::default();
        let post = EvidenceBundle::default()
            .with_image(image(3))
            .with_text("Sunset at the pier after class!");
        let req = engine.build_profile_request(&post, &cfg).unwrap();
        assert!(req.user_text.contains("location, age, and gender"));
        assert!(req.user_text.contains(PROFILE_SENTINEL));

        let image_only = EvidenceBundle::default().with_image(image(3));
        assert!(matches!(
            engine.build_profile_request(&image_only, &cfg),
            Err(PromptError::EmptyEvidence)
        ));

        let mut zh = post.clone();
        zh.prompt_language = Language::Zh;
        let req = engine.build_profile_request(&zh, &cfg).unwrap();
        assert!(req.user_text.contains(PROFILE_SENTINEL));
        assert!(req.user_text.contains("年龄"));
    }

    #[test]
    fn requests_are_deterministic() {
        let bundle = EvidenceBundle::default().with_image(image(1)).with_text("hello");
        let a = PromptEngine::builtin().build_inference_request(&bundle, &PromptConfig::default());
        let b = PromptEngine::builtin().build_inference_request(&bundle, &PromptConfig::default());
        assert_eq!(a.unwrap(), b.unwrap());
    }
}
