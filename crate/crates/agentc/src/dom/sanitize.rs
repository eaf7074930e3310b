use ego_tree::NodeRef;
use html5ever::{Attribute, QualName};
use scraper::node::Element;
use scraper::{Html, Node};

use super::classify::{ClassLabel, CompiledPolicy};
use super::{estimate_tokens_for, SanitizeStats, SanitizedSkeleton, SanitizerConfig};

const VOID: [&str; 15] = [
    "area", "base", "br", "col", "embed", "hr", "img", "input", "keygen", "link", "meta", "param", "source", "track",
    "wbr",
];
const RAW_TEXT: [&str; 7] = ["script", "style", "xmp", "iframe", "noembed", "noframes", "noscript"];
const PREFORMATTED: [&str; 3] = ["pre", "textarea", "listing"];

/// A parsed page. Inputs starting with `<html` or a doctype parse as full
/// documents; anything else parses as a body fragment.
#[derive(Debug, Clone)]
pub struct Dom {
    html: Html,
    fragment: bool,
}

pub fn parse(input: &str) -> Dom {
    let head = input
        .trim_start()
        .get(..9)
        .unwrap_or(input.trim_start())
        .to_ascii_lowercase();
    if head.starts_with("<!doctype") || head.starts_with("<html") {
        Dom {
            html: Html::parse_document(input),
            fragment: false,
        }
    } else {
        Dom {
            html: Html::parse_fragment(input),
            fragment: true,
        }
    }
}

impl Dom {
    /// The node whose children make up the page content. Fragments get a
    /// synthetic `<html>` wrapper from the parser that is not part of the input.
    fn content_root(&self) -> NodeRef<'_, Node> {
        let root = self.html.tree.root();
        if self.fragment {
            root.children().find(|c| c.value().is_element()).unwrap_or(root)
        } else {
            root
        }
    }

    pub(crate) fn elements(&self) -> impl Iterator<Item = &Element> {
        self.content_root()
            .descendants()
            .skip(1)
            .filter_map(|n| n.value().as_element())
    }

    fn element_count(&self) -> usize {
        self.content_root()
            .descendants()
            .skip(1)
            .filter(|n| n.value().is_element())
            .count()
    }
}

/// Serializes without filtering: comments and doctypes are dropped and
/// whitespace collapsed, as in sanitized output.
pub fn serialize_dom(dom: &Dom) -> String {
    let mut e = Emitter::plain();
    e.children(dom.content_root(), false);
    e.out
}

/// Single traversal applying noise pruning, visibility filtering and
/// attribute cleansing, in that order, to each element as it is reached.
pub fn sanitize(input: &str, cfg: &SanitizerConfig) -> SanitizedSkeleton {
    let policy = compile_lenient(cfg);
    let dom = parse(input);
    let mut e = Emitter::filtering(cfg, &policy);
    e.children(dom.content_root(), false);

    let baseline = serialize_dom(&dom).chars().count();
    let chars_in = input.chars().count().max(baseline);
    let chars_out = e.out.chars().count();
    let est_tokens_in = estimate_tokens_for(chars_in, cfg.token_chars_ratio);
    let est_tokens_out = estimate_tokens_for(chars_out, cfg.token_chars_ratio);
    let reduction_ratio = if est_tokens_in > 0 {
        1.0 - est_tokens_out as f64 / est_tokens_in as f64
    } else {
        0.0
    };
    SanitizedSkeleton {
        stats: SanitizeStats {
            nodes_in: dom.element_count(),
            nodes_out: e.elements,
            chars_in,
            chars_out,
            est_tokens_in,
            est_tokens_out,
            reduction_ratio,
        },
        html: e.out,
    }
}

/// The same transformation as [`sanitize`] run as three whole-tree passes.
pub fn sanitize_in_passes(input: &str, cfg: &SanitizerConfig) -> String {
    let mut dom = parse(input);
    prune_noise(&mut dom, cfg);
    filter_hidden(&mut dom, cfg);
    cleanse_attributes(&mut dom, cfg);
    serialize_dom(&dom)
}

/// Removes pruned-tag subtrees and oversized `data:` URI attributes.
pub fn prune_noise(dom: &mut Dom, cfg: &SanitizerConfig) {
    detach_where(dom, |el| cfg.pruned_tags.contains(el.name()));
    rewrite_attributes(dom, |el| {
        el.attrs
            .iter()
            .filter(|(_, v)| !is_oversized_data_uri(v, cfg))
            .map(|(n, v)| (n.clone(), v.to_string()))
            .collect()
    });
}

/// Removes subtrees that are hidden by inline style, `hidden`, or
/// `aria-hidden="true"`.
pub fn filter_hidden(dom: &mut Dom, cfg: &SanitizerConfig) {
    detach_where(dom, |el| is_hidden(el, cfg));
}

/// Drops attributes outside the allowlist and utility classes.
pub fn cleanse_attributes(dom: &mut Dom, cfg: &SanitizerConfig) {
    let policy = compile_lenient(cfg);
    rewrite_attributes(dom, |el| cleansed_attrs(el, cfg, &policy, false));
}

pub(crate) fn compile_lenient(cfg: &SanitizerConfig) -> CompiledPolicy {
    // Configs are checked at load time; a bad rule here simply never matches.
    let rules = cfg
        .class_policy
        .0
        .iter()
        .filter(|r| regex::Regex::new(&r.pattern).is_ok())
        .cloned()
        .collect();
    super::ClassPolicy(rules).compile().expect("patterns were pre-filtered")
}

fn detach_where(dom: &mut Dom, pred: impl Fn(&Element) -> bool) {
    let doomed: Vec<_> = dom
        .content_root()
        .descendants()
        .skip(1)
        .filter(|n| n.value().as_element().is_some_and(&pred))
        .map(|n| n.id())
        .collect();
    for id in doomed {
        if let Some(mut node) = dom.html.tree.get_mut(id) {
            node.detach();
        }
    }
}

fn rewrite_attributes(dom: &mut Dom, f: impl Fn(&Element) -> Vec<(QualName, String)>) {
    let ids: Vec<_> = dom
        .content_root()
        .descendants()
        .skip(1)
        .filter(|n| n.value().is_element())
        .map(|n| n.id())
        .collect();
    for id in ids {
        let mut node = dom.html.tree.get_mut(id).expect("id collected from this tree");
        let Node::Element(el) = node.value() else { continue };
        let attrs = f(el);
        *el = rebuild_element(el, attrs);
    }
}

/// New element with the given attributes. Rebuilding (rather than editing
/// `attrs` in place) keeps the element's cached id and class list in sync.
pub(crate) fn rebuild_element(el: &Element, attrs: Vec<(QualName, String)>) -> Element {
    Element::new(
        el.name.clone(),
        attrs
            .into_iter()
            .map(|(name, value)| Attribute {
                name,
                value: value.into(),
            })
            .collect(),
    )
}

fn is_oversized_data_uri(value: &str, cfg: &SanitizerConfig) -> bool {
    let v = value.trim_start();
    v.len() > cfg.max_data_uri_chars && v.get(..5).is_some_and(|p| p.eq_ignore_ascii_case("data:"))
}

pub(crate) fn is_hidden(el: &Element, cfg: &SanitizerConfig) -> bool {
    if el.attr("hidden").is_some() {
        return true;
    }
    if el
        .attr("aria-hidden")
        .is_some_and(|v| v.trim().eq_ignore_ascii_case("true"))
    {
        return true;
    }
    if cfg.drop_hidden_inputs
        && el.name() == "input"
        && el.attr("type").is_some_and(|t| t.trim().eq_ignore_ascii_case("hidden"))
    {
        return true;
    }
    el.attr("style").is_some_and(style_hides)
}

fn style_hides(style: &str) -> bool {
    style.split(';').any(|decl| {
        let Some((prop, value)) = decl.split_once(':') else {
            return false;
        };
        let prop = prop.trim().to_ascii_lowercase();
        let value = value.trim().trim_end_matches("!important").trim().to_ascii_lowercase();
        (prop == "display" && value == "none") || (prop == "visibility" && value == "hidden")
    })
}

fn cleansed_attrs(
    el: &Element,
    cfg: &SanitizerConfig,
    policy: &CompiledPolicy,
    prune: bool,
) -> Vec<(QualName, String)> {
    let mut kept = Vec::new();
    for (name, value) in el.attrs.iter() {
        if prune && is_oversized_data_uri(value, cfg) {
            continue;
        }
        let local: &str = &name.local;
        if local == "class" && name.prefix.is_none() {
            let classes: Vec<&str> = value
                .split_ascii_whitespace()
                .filter(|c| policy.label(c) == ClassLabel::Semantic)
                .collect();
            if !classes.is_empty() {
                kept.push((name.clone(), classes.join(" ")));
            }
        } else if cfg.allows_attribute(&qualified(name)) {
            kept.push((name.clone(), value.to_string()));
        }
    }
    kept
}

fn qualified(name: &QualName) -> String {
    match &name.prefix {
        Some(p) => format!("{}:{}", p, name.local),
        None => name.local.to_string(),
    }
}

struct Emitter<'c> {
    filter: Option<(&'c SanitizerConfig, &'c CompiledPolicy)>,
    out: String,
    elements: usize,
    /// The output ends in a collapsed space from text, so a following text
    /// node must not add another.
    trailing_space: bool,
}

impl<'c> Emitter<'c> {
    fn plain() -> Self {
        Emitter {
            filter: None,
            out: String::new(),
            elements: 0,
            trailing_space: false,
        }
    }

    fn filtering(cfg: &'c SanitizerConfig, policy: &'c CompiledPolicy) -> Self {
        Emitter {
            filter: Some((cfg, policy)),
            out: String::new(),
            elements: 0,
            trailing_space: false,
        }
    }

    fn children(&mut self, node: NodeRef<'_, Node>, pre: bool) {
        for child in node.children() {
            self.node(child, pre);
        }
    }

    fn node(&mut self, node: NodeRef<'_, Node>, pre: bool) {
        match node.value() {
            Node::Text(t) => {
                let raw_parent = node
                    .parent()
                    .and_then(|p| p.value().as_element().map(|e| RAW_TEXT.contains(&e.name())))
                    .unwrap_or(false);
                if raw_parent {
                    self.out.push_str(&t.text);
                    self.trailing_space = false;
                } else if pre {
                    escape_text(&t.text, &mut self.out);
                    self.trailing_space = false;
                } else {
                    let collapsed = collapse_whitespace(&t.text);
                    if !collapsed.trim().is_empty() {
                        let text = match self.trailing_space {
                            true => collapsed.strip_prefix(' ').unwrap_or(&collapsed),
                            false => &collapsed,
                        };
                        escape_text(text, &mut self.out);
                        self.trailing_space = collapsed.ends_with(' ');
                    }
                }
            }
            Node::Element(el) => self.element(node, el, pre),
            Node::Document | Node::Fragment => self.children(node, pre),
            // Comments, doctypes and processing instructions carry no signal.
            _ => {}
        }
    }

    fn element(&mut self, node: NodeRef<'_, Node>, el: &Element, pre: bool) {
        let name = el.name();
        let attrs = match self.filter {
            Some((cfg, policy)) => {
                if cfg.pruned_tags.contains(name) || is_hidden(el, cfg) {
                    return;
                }
                cleansed_attrs(el, cfg, policy, true)
            }
            None => el.attrs.iter().map(|(n, v)| (n.clone(), v.to_string())).collect(),
        };
        self.elements += 1;
        self.trailing_space = false;
        self.out.push('<');
        self.out.push_str(name);
        for (attr, value) in &attrs {
            self.out.push(' ');
            self.out.push_str(&qualified(attr));
            self.out.push_str("=\"");
            escape_attr(value, &mut self.out);
            self.out.push('"');
        }
        self.out.push('>');
        if VOID.contains(&name) {
            return;
        }
        let pre_here = pre || PREFORMATTED.contains(&name);
        if PREFORMATTED.contains(&name) {
            // The parser drops one newline right after these start tags.
            let leading_newline = node
                .first_child()
                .and_then(|c| c.value().as_text().map(|t| t.text.starts_with('\n')))
                .unwrap_or(false);
            if leading_newline {
                self.out.push('\n');
            }
        }
        self.children(node, pre_here);
        self.trailing_space = false;
        self.out.push_str("</");
        self.out.push_str(name);
        self.out.push('>');
    }
}

fn collapse_whitespace(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut in_space = false;
    for c in s.chars() {
        if c.is_ascii_whitespace() {
            if !in_space {
                out.push(' ');
            }
            in_space = true;
        } else {
            out.push(c);
            in_space = false;
        }
    }
    out
}

fn escape_text(s: &str, out: &mut String) {
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '\u{a0}' => out.push_str("&nbsp;"),
            _ => out.push(c),
        }
    }
}

fn escape_attr(s: &str, out: &mut String) {
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '"' => out.push_str("&quot;"),
            '\u{a0}' => out.push_str("&nbsp;"),
            _ => out.push(c),
        }
    }
}
