use ego_tree::{NodeId, NodeRef};
use html5ever::{ns, LocalName, QualName};
use scraper::node::Text;
use scraper::{Html, Node, Selector};
use serde::{Deserialize, Serialize};

use crate::dom::rebuild_element;

/// One scripted DOM change. Each edit applies to every element matching its
/// selector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Edit {
    Remove {
        selector: String,
    },
    SetAttr {
        selector: String,
        name: String,
        value: String,
    },
    RemoveAttr {
        selector: String,
        name: String,
    },
    RenameAttr {
        selector: String,
        from: String,
        to: String,
    },
    SetText {
        selector: String,
        text: String,
    },
    AppendHtml {
        selector: String,
        html: String,
    },
    ReplaceClass {
        selector: String,
        from: String,
        to: String,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EditEffect {
    pub matched: usize,
    /// The edit put a `role="dialog"` element into the page.
    pub dialog_added: bool,
}

impl Edit {
    pub fn selector(&self) -> &str {
        match self {
            Edit::Remove { selector }
            | Edit::SetAttr { selector, .. }
            | Edit::RemoveAttr { selector, .. }
            | Edit::RenameAttr { selector, .. }
            | Edit::SetText { selector, .. }
            | Edit::AppendHtml { selector, .. }
            | Edit::ReplaceClass { selector, .. } => selector,
        }
    }

    pub fn check(&self) -> Result<(), String> {
        Selector::parse(self.selector())
            .map(|_| ())
            .map_err(|e| format!("bad selector: {e}"))
    }
}

pub(crate) fn attr_name(name: &str) -> QualName {
    QualName::new(None, ns!(), LocalName::from(name))
}

pub fn apply_edit(doc: &mut Html, edit: &Edit) -> Result<EditEffect, String> {
    let selector = Selector::parse(edit.selector()).map_err(|e| format!("bad selector: {e}"))?;
    let targets: Vec<NodeId> = doc.select(&selector).map(|e| e.id()).collect();
    let mut effect = EditEffect {
        matched: targets.len(),
        dialog_added: false,
    };
    for id in targets {
        match edit {
            Edit::Remove { .. } => {
                if let Some(mut n) = doc.tree.get_mut(id) {
                    n.detach();
                }
            }
            Edit::SetAttr { name, value, .. } => {
                update_attrs(doc, id, |attrs| {
                    attrs.retain(|(n, _)| &*n.local != name.as_str());
                    attrs.push((attr_name(name), value.clone()));
                });
                effect.dialog_added |= name == "role" && value == "dialog";
            }
            Edit::RemoveAttr { name, .. } => {
                update_attrs(doc, id, |attrs| attrs.retain(|(n, _)| &*n.local != name.as_str()))
            }
            Edit::RenameAttr { from, to, .. } => update_attrs(doc, id, |attrs| {
                if let Some(i) = attrs.iter().position(|(n, _)| &*n.local == from.as_str()) {
                    let (_, v) = attrs.remove(i);
                    attrs.retain(|(n, _)| &*n.local != to.as_str());
                    attrs.push((attr_name(to), v));
                }
            }),
            Edit::ReplaceClass { from, to, .. } => update_attrs(doc, id, |attrs| {
                for (n, v) in attrs.iter_mut() {
                    if &*n.local == "class" {
                        *v = v
                            .split_ascii_whitespace()
                            .map(|c| if c == from { to.as_str() } else { c })
                            .collect::<Vec<_>>()
                            .join(" ");
                    }
                }
            }),
            Edit::SetText { text, .. } => set_text(doc, id, text),
            Edit::AppendHtml { html, .. } => {
                let fragment = Html::parse_fragment(html);
                let root = fragment.root_element();
                effect.dialog_added |= root
                    .descendent_elements()
                    .any(|e| e.value().attr("role") == Some("dialog"));
                for child in (*root).children() {
                    copy_subtree(doc, id, child);
                }
            }
        }
    }
    Ok(effect)
}

fn update_attrs(doc: &mut Html, id: NodeId, f: impl FnOnce(&mut Vec<(QualName, String)>)) {
    let Some(mut node) = doc.tree.get_mut(id) else { return };
    let Node::Element(el) = node.value() else { return };
    let mut attrs: Vec<(QualName, String)> = el.attrs.iter().map(|(n, v)| (n.clone(), v.to_string())).collect();
    f(&mut attrs);
    *el = rebuild_element(el, attrs);
}

pub(crate) fn set_text(doc: &mut Html, id: NodeId, text: &str) {
    let children: Vec<NodeId> = match doc.tree.get(id) {
        Some(n) => n.children().map(|c| c.id()).collect(),
        None => return,
    };
    for c in children {
        if let Some(mut n) = doc.tree.get_mut(c) {
            n.detach();
        }
    }
    if !text.is_empty() {
        if let Some(mut n) = doc.tree.get_mut(id) {
            n.append(Node::Text(Text { text: text.into() }));
        }
    }
}

/// Deep-copies `src` (from another tree) as the last child of `parent`.
pub(crate) fn copy_subtree(doc: &mut Html, parent: NodeId, src: NodeRef<'_, Node>) {
    let Some(mut p) = doc.tree.get_mut(parent) else { return };
    let id = p.append(src.value().clone()).id();
    for child in src.children() {
        copy_subtree(doc, id, child);
    }
}
