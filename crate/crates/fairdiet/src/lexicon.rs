//! Gender lexicon: detection and counterfactual flipping of gender words.
//!
//! A [`GenderLexicon`] maps masculine surface forms to feminine ones and
//! back: word pairs (king/queen), name pairs (john/alice), and fixed rules
//! for the eight personal pronouns. [`flip_gender`] replaces every matched
//! whole token with its opposite-gender form, preserving the token's casing
//! class and leaving all other bytes untouched.

use crate::error::Error;
use crate::Result;
use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::sync::OnceLock;

/// Casing class of a token. Flips reproduce the class on the replacement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Casing {
    Lower,
    Capitalized,
    AllCaps,
    Mixed,
}

/// A token with byte offsets into the original text.
///
/// Spans are non-overlapping and ordered; concatenating spans with the
/// inter-span text reconstructs the input exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSpan<'a> {
    pub surface: &'a str,
    pub start: usize,
    pub end: usize,
    pub casing: Casing,
}

/// Split text into maximal alphanumeric runs. Punctuation and whitespace
/// are never part of a token, so lexicon matches are whole-token only.
pub fn tokenize(text: &str) -> Vec<TokenSpan<'_>> {
    let mut spans = Vec::new();
    let mut start: Option<usize> = None;
    for (idx, ch) in text.char_indices() {
        if ch.is_alphanumeric() {
            if start.is_none() {
                start = Some(idx);
            }
        } else if let Some(s) = start.take() {
            spans.push(make_span(text, s, idx));
        }
    }
    if let Some(s) = start {
        spans.push(make_span(text, s, text.len()));
    }
    spans
}

fn make_span(text: &str, start: usize, end: usize) -> TokenSpan<'_> {
    let surface = &text[start..end];
    TokenSpan {
        surface,
        start,
        end,
        casing: casing_of(surface),
    }
}

fn casing_of(surface: &str) -> Casing {
    let letters: Vec<char> = surface.chars().filter(|c| c.is_alphabetic()).collect();
    if letters.is_empty() || letters.iter().all(|c| c.is_lowercase()) {
        return Casing::Lower;
    }
    if letters.iter().all(|c| c.is_uppercase()) {
        return if letters.len() == 1 {
            Casing::Capitalized
        } else {
            Casing::AllCaps
        };
    }
    if letters[0].is_uppercase() && letters[1..].iter().all(|c| c.is_lowercase()) {
        return Casing::Capitalized;
    }
    Casing::Mixed
}

fn apply_casing(replacement: &str, casing: Casing) -> String {
    match casing {
        // Mixed casing is degenerate input; replace in lowercase.
        Casing::Lower | Casing::Mixed => replacement.to_string(),
        Casing::AllCaps => replacement.to_uppercase(),
        Casing::Capitalized => {
            let mut chars = replacement.chars();
            match chars.next() {
                Some(first) => first.to_uppercase().chain(chars).collect(),
                None => String::new(),
            }
        }
    }
}

/// Replacement target for a matched surface form.
#[derive(Debug, Clone, PartialEq, Eq)]
enum Target {
    Fixed(String),
    /// Feminine "her": "his" before a noun-like token, else "him".
    AmbiguousHer,
    /// Masculine "his": "her" before a noun-like token, else "hers".
    AmbiguousHis,
}

/// Pronoun mapping table covering he/him/his/himself and
/// she/her/hers/herself, including the "her" disambiguation rule.
#[derive(Debug, Clone)]
pub struct PronounRules {
    entries: Vec<(&'static str, Target)>,
}

impl PronounRules {
    fn built_in() -> Self {
        let entries = vec![
            ("he", Target::Fixed("she".into())),
            ("she", Target::Fixed("he".into())),
            ("him", Target::Fixed("her".into())),
            ("hers", Target::Fixed("his".into())),
            ("himself", Target::Fixed("herself".into())),
            ("herself", Target::Fixed("himself".into())),
            ("her", Target::AmbiguousHer),
            ("his", Target::AmbiguousHis),
        ];
        PronounRules { entries }
    }

    pub fn surfaces(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.iter().map(|(s, _)| *s)
    }
}

/// Closed list of next-token words that mark an objective/standalone
/// pronoun reading ("saw her today" -> "him"). A following token outside
/// this list is treated as noun-like and selects the possessive reading
/// ("her book" -> "his book"). Punctuation, digits, and end-of-text also
/// select the objective reading.
const NON_NOUN_FOLLOWERS: &[&str] = &[
    // prepositions
    "about", "above", "across", "after", "against", "along", "among", "around", "at", "before",
    "behind", "below", "beneath", "beside", "between", "beyond", "by", "down", "during", "for",
    "from", "in", "inside", "into", "near", "of", "off", "on", "onto", "out", "outside", "over",
    "past", "since", "through", "throughout", "to", "toward", "towards", "under", "underneath",
    "until", "unto", "up", "upon", "with", "within", "without",
    // conjunctions and complementizers
    "and", "or", "but", "nor", "so", "yet", "because", "although", "though", "while", "if",
    "unless", "when", "whenever", "where", "wherever", "that", "than", "as", "whether",
    // auxiliaries and copulas
    "is", "was", "are", "were", "be", "been", "being", "am", "has", "have", "had", "having",
    "do", "does", "did", "done", "will", "would", "shall", "should", "can", "could", "may",
    "might", "must",
    // frequent verbs following an object pronoun
    "said", "says", "say", "saying", "told", "tells", "tell", "telling", "asked", "asks", "ask",
    "asking", "gave", "give", "gives", "giving", "got", "get", "gets", "getting", "went", "go",
    "goes", "going", "came", "come", "comes", "coming", "saw", "see", "sees", "seeing", "met",
    "meets", "meet", "meeting", "looked", "looks", "look", "looking", "called", "calls", "call",
    "calling", "made", "make", "makes", "making", "knew", "know", "knows", "knowing", "thought",
    "think", "thinks", "thinking", "felt", "feel", "feels", "feeling", "wanted", "want", "wants",
    "wanting", "liked", "like", "likes", "liking", "loved", "love", "loves", "loving", "hated",
    "hate", "hates", "hating", "helped", "help", "helps", "helping", "left", "leave", "leaves",
    "leaving", "kept", "keep", "keeps", "keeping", "took", "take", "takes", "taking", "found",
    "find", "finds", "finding", "brought", "bring", "brings", "bringing", "showed", "show",
    "shows", "showing",
    // wh-words and pronouns
    "who", "whom", "whose", "which", "what", "why", "how", "it", "he", "she", "they", "them",
    "him", "us", "we", "you", "i", "me", "myself", "himself", "herself", "themselves",
    // adverbs and particles
    "not", "never", "always", "often", "sometimes", "usually", "here", "there", "now", "then",
    "today", "tomorrow", "yesterday", "soon", "later", "earlier", "again", "back", "away",
    "once", "twice", "too", "also", "just", "only", "even", "still", "already", "instead",
    "anyway", "alone", "together", "first", "last", "next", "well", "badly", "quickly",
    "slowly", "everywhere", "somewhere", "anywhere", "nowhere",
    // determiners and quantifiers
    "a", "an", "the", "this", "these", "those", "some", "any", "no", "every", "each", "either",
    "neither", "both", "all", "most", "many", "much", "few", "several",
];

/// Bidirectional gender lexicon. Immutable after construction; all
/// operations are pure functions safe to share across threads.
#[derive(Debug, Clone)]
pub struct GenderLexicon {
    pub word_pairs: Vec<(String, String)>,
    pub name_pairs: Vec<(String, String)>,
    pronoun_rules: PronounRules,
    lookup: HashMap<String, Target>,
    non_noun_followers: HashSet<&'static str>,
}

impl GenderLexicon {
    /// Build a lexicon from word and name pairs (lowercased). Fails when a
    /// surface form appears in more than one pair or collides with a
    /// pronoun rule.
    pub fn new(word_pairs: Vec<(String, String)>, name_pairs: Vec<(String, String)>) -> Result<Self> {
        let pronoun_rules = PronounRules::built_in();
        let mut lookup: HashMap<String, Target> = HashMap::new();
        // (surface -> pair that introduced it), for duplicate reporting
        let mut owner: HashMap<String, (String, String)> = HashMap::new();

        for (a, b) in pronoun_rules.entries.iter() {
            lookup.insert((*a).to_string(), b.clone());
            owner.insert((*a).to_string(), ((*a).to_string(), "<pronoun rule>".to_string()));
        }

        for (masc, fem) in word_pairs.iter().chain(name_pairs.iter()) {
            for (from, to) in [(masc, fem), (fem, masc)] {
                let key = from.to_lowercase();
                if let Some((pa, pb)) = owner.get(&key) {
                    return Err(Error::DuplicateMapping {
                        surface: key,
                        first_a: pa.clone(),
                        first_b: pb.clone(),
                        second_a: masc.clone(),
                        second_b: fem.clone(),
                    });
                }
                owner.insert(key.clone(), (masc.clone(), fem.clone()));
                lookup.insert(key, Target::Fixed(to.to_lowercase()));
            }
        }

        Ok(GenderLexicon {
            word_pairs,
            name_pairs,
            pronoun_rules,
            lookup,
            non_noun_followers: NON_NOUN_FOLLOWERS.iter().copied().collect(),
        })
    }

    /// Parse the lexicon file format: one `masculine<TAB>feminine` pair per
    /// line, `#` comments, name pairs under a `[names]` section.
    pub fn parse(content: &str) -> Result<Self> {
        let mut word_pairs = Vec::new();
        let mut name_pairs = Vec::new();
        let mut in_names = false;
        for (idx, raw) in content.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line == "[names]" {
                in_names = true;
                continue;
            }
            if line.starts_with('[') {
                return Err(Error::LexiconParse {
                    line: idx + 1,
                    message: format!("unknown section '{line}'"),
                });
            }
            let mut fields = line.split('\t');
            let (a, b) = match (fields.next(), fields.next(), fields.next()) {
                (Some(a), Some(b), None) if !a.trim().is_empty() && !b.trim().is_empty() => {
                    (a.trim().to_lowercase(), b.trim().to_lowercase())
                }
                _ => {
                    return Err(Error::LexiconParse {
                        line: idx + 1,
                        message: "expected exactly two tab-separated non-empty fields".to_string(),
                    })
                }
            };
            if in_names {
                name_pairs.push((a, b));
            } else {
                word_pairs.push((a, b));
            }
        }
        GenderLexicon::new(word_pairs, name_pairs)
    }

    /// Load a lexicon from a file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let content =
            std::fs::read_to_string(&path).map_err(|e| Error::io_path(path.as_ref(), e))?;
        GenderLexicon::parse(&content)
    }

    /// The built-in default lexicon. Always available; covers the eight
    /// pronouns, common gendered nouns, and a bundled name list.
    pub fn default_builtin() -> &'static GenderLexicon {
        static DEFAULT: OnceLock<GenderLexicon> = OnceLock::new();
        DEFAULT.get_or_init(|| {
            GenderLexicon::parse(include_str!("../assets/default_lexicon.tsv"))
                .expect("built-in lexicon is valid")
        })
    }

    pub fn pronoun_rules(&self) -> &PronounRules {
        &self.pronoun_rules
    }

    /// Every lowercase surface form the lexicon matches.
    pub fn surfaces(&self) -> impl Iterator<Item = &str> {
        self.lookup.keys().map(|s| s.as_str())
    }

    pub fn matches(&self, token_lower: &str) -> bool {
        self.lookup.contains_key(token_lower)
    }

    fn is_noun_like(&self, token_lower: &str) -> bool {
        !self.non_noun_followers.contains(token_lower)
            && !token_lower.chars().all(|c| c.is_ascii_digit())
    }
}

/// Next-token context for pronoun disambiguation.
struct FollowContext<'a> {
    /// Next token lowercased, if any.
    next_lower: Option<String>,
    /// True when only whitespace separates the token from the next one.
    adjacent: bool,
    _marker: std::marker::PhantomData<&'a ()>,
}

fn follow_context<'a>(text: &'a str, spans: &[TokenSpan<'a>], idx: usize) -> FollowContext<'a> {
    match spans.get(idx + 1) {
        Some(next) => {
            let gap = &text[spans[idx].end..next.start];
            FollowContext {
                next_lower: Some(next.surface.to_lowercase()),
                adjacent: gap.chars().all(|c| c.is_whitespace()),
                _marker: std::marker::PhantomData,
            }
        }
        None => FollowContext {
            next_lower: None,
            adjacent: false,
            _marker: std::marker::PhantomData,
        },
    }
}

/// Replace every lexicon-matched token with its opposite-gender form,
/// preserving the casing class. Unmatched text is byte-identical, so
/// gender-free input is returned unchanged.
pub fn flip_gender(text: &str, lexicon: &GenderLexicon) -> String {
    let spans = tokenize(text);
    let mut out = String::with_capacity(text.len());
    let mut cursor = 0;
    for (i, span) in spans.iter().enumerate() {
        out.push_str(&text[cursor..span.start]);
        let lower = span.surface.to_lowercase();
        match lexicon.lookup.get(&lower) {
            Some(target) => {
                let replacement = match target {
                    Target::Fixed(r) => r.as_str(),
                    Target::AmbiguousHer | Target::AmbiguousHis => {
                        let ctx = follow_context(text, &spans, i);
                        let noun_like = ctx.adjacent
                            && ctx
                                .next_lower
                                .as_deref()
                                .is_some_and(|next| lexicon.is_noun_like(next));
                        match (target, noun_like) {
                            (Target::AmbiguousHer, true) => "his",
                            (Target::AmbiguousHer, false) => "him",
                            (Target::AmbiguousHis, true) => "her",
                            (Target::AmbiguousHis, false) => "hers",
                            (Target::Fixed(_), _) => unreachable!(),
                        }
                    }
                };
                out.push_str(&apply_casing(replacement, span.casing));
            }
            None => out.push_str(span.surface),
        }
        cursor = span.end;
    }
    out.push_str(&text[cursor..]);
    out
}

/// True iff at least one token matches the lexicon.
pub fn contains_gender_words(text: &str, lexicon: &GenderLexicon) -> bool {
    tokenize(text)
        .iter()
        .any(|span| lexicon.matches(&span.surface.to_lowercase()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lex() -> &'static GenderLexicon {
        GenderLexicon::default_builtin()
    }

    #[test]
    fn default_lexicon_covers_pronouns() {
        for p in ["he", "him", "himself", "his", "she", "her", "hers", "herself"] {
            assert!(lex().matches(p), "missing pronoun {p}");
        }
        assert!(lex().word_pairs.iter().any(|(m, f)| m == "king" && f == "queen"));
    }

    #[test]
    fn duplicate_pair_is_rejected() {
        let src = "king\tqueen\nking\tqueen\n";
        match GenderLexicon::parse(src) {
            Err(Error::DuplicateMapping { surface, .. }) => assert_eq!(surface, "king"),
            other => panic!("expected duplicate-mapping error, got {other:?}"),
        }
    }

    #[test]
    fn name_pairs_flip_both_directions() {
        let src = "[names]\nJohn\tAlice\n";
        let lexicon = GenderLexicon::parse(src).unwrap();
        assert!(lexicon.name_pairs.contains(&("john".into(), "alice".into())));
        assert_eq!(flip_gender("John met Alice", &lexicon), "Alice met John");
    }

    #[test]
    fn parse_error_carries_line_number() {
        let src = "king\tqueen\nbroken line without tab\n";
        match GenderLexicon::parse(src) {
            Err(Error::LexiconParse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn flips_the_reference_sentence() {
        assert_eq!(
            flip_gender("he explained the situation to her", lex()),
            "she explained the situation to him"
        );
    }

    #[test]
    fn flips_gendered_nouns_only() {
        assert_eq!(
            flip_gender("okay king of the Wikipedia Nazis", lex()),
            "okay queen of the Wikipedia Nazis"
        );
        assert_eq!(
            flip_gender("I'm not sexist.. But women drivers are terrible", lex()),
            "I'm not sexist.. But men drivers are terrible"
        );
    }

    #[test]
    fn gender_free_text_is_identity() {
        let s = "Oh my god.... When will this show end";
        assert_eq!(flip_gender(s, lex()), s);
        assert!(!contains_gender_words(s, lex()));
    }

    #[test]
    fn casing_is_preserved() {
        assert_eq!(flip_gender("SHE said so", lex()), "HE said so");
        assert_eq!(flip_gender("She said so", lex()), "He said so");
        assert_eq!(flip_gender("Kate you stupid woman!", lex()), "Kareem you stupid man!");
    }

    #[test]
    fn mixed_casing_falls_back_to_lowercase() {
        assert_eq!(flip_gender("hEr book", lex()), "his book");
    }

    #[test]
    fn her_disambiguation() {
        // possessive before a noun-like token
        assert_eq!(flip_gender("her book is new", lex()), "his book is new");
        // objective at end of text, before punctuation, and before closed-list words
        assert_eq!(flip_gender("I saw her", lex()), "I saw him");
        assert_eq!(flip_gender("I saw her, then left", lex()), "I saw him, then left");
        assert_eq!(flip_gender("I told her to wait", lex()), "I told him to wait");
        assert_eq!(flip_gender("I saw her yesterday", lex()), "I saw him yesterday");
        // digits count as non-noun-like
        assert_eq!(flip_gender("I gave her 5 dollars", lex()), "I gave him 5 dollars");
    }

    #[test]
    fn his_disambiguation_mirrors_her() {
        assert_eq!(flip_gender("his report was late", lex()), "her report was late");
        assert_eq!(flip_gender("the book is his", lex()), "the book is hers");
        assert_eq!(flip_gender("the book is hers", lex()), "the book is his");
    }

    #[test]
    fn contains_gender_words_cases() {
        assert!(contains_gender_words("Kate you stupid woman!", lex()));
        assert!(!contains_gender_words("", lex()));
        assert!(!contains_gender_words("The meeting ran long", lex()));
    }

    #[test]
    fn substrings_never_match() {
        // "the" inside "therapist", "he" inside "the"
        let s = "the therapist chess hero's"; // hero is a lexicon word, hero's splits at '
        assert_eq!(flip_gender(s, lex()), "the therapist chess heroine's");
        assert_eq!(flip_gender("mother-in-law", lex()), "father-in-law");
    }

    #[test]
    fn token_spans_reconstruct_input() {
        let s = "He said, \"Kate's 2nd try—done!\"";
        let spans = tokenize(s);
        let mut rebuilt = String::new();
        let mut cursor = 0;
        for span in &spans {
            assert!(span.start >= cursor, "spans must be ordered and disjoint");
            rebuilt.push_str(&s[cursor..span.start]);
            rebuilt.push_str(span.surface);
            cursor = span.end;
        }
        rebuilt.push_str(&s[cursor..]);
        assert_eq!(rebuilt, s);
    }

    proptest! {
        #[test]
        fn flip_is_identity_on_gender_free_text(s in "[a-z0-9 .,!?]{0,80}") {
            prop_assume!(!contains_gender_words(&s, lex()));
            prop_assert_eq!(flip_gender(&s, lex()), s);
        }

        #[test]
        fn flip_preserves_casing_class(
            word_idx in 0usize..8,
            style in 0u8..3,
        ) {
            let words = ["he", "she", "him", "himself", "herself", "king", "woman", "john"];
            let base = words[word_idx];
            let token = match style {
                0 => base.to_string(),
                1 => apply_casing(base, Casing::Capitalized),
                _ => base.to_uppercase(),
            };
            let flipped = flip_gender(&token, lex());
            prop_assert_ne!(&flipped, &token);
            prop_assert_eq!(casing_of(&flipped), casing_of(&token));
        }
    }
}
