use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{RawUiTree, UiNode};

/// A conjunction of attribute tests over a single node.
///
/// Absent fields do not constrain. A tree satisfies the predicate when at
/// least `min_count` nodes (default 1) pass every test.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodePredicate {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_equals: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_contains: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_regex: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content_desc_equals: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content_desc_contains: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resource_id_equals: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resource_id_ends_with: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checked: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enabled: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_count: Option<usize>,
}

impl NodePredicate {
    pub fn text_equals(value: impl Into<String>) -> Self {
        Self { text_equals: Some(value.into()), ..Self::default() }
    }

    /// Compiles the regex test, if any.
    pub fn compiled_regex(&self) -> Result<Option<Regex>, regex::Error> {
        self.text_regex.as_deref().map(Regex::new).transpose()
    }

    pub fn is_trivial(&self) -> bool {
        *self == Self { min_count: self.min_count, ..Self::default() }
    }

    fn matches_node(&self, node: &UiNode, regex: Option<&Regex>) -> bool {
        fn opt<T: ?Sized>(test: Option<&T>, f: impl FnOnce(&T) -> bool) -> bool {
            test.is_none_or(f)
        }
        opt(self.text_equals.as_deref(), |v| node.text == v)
            && opt(self.text_contains.as_deref(), |v| node.text.contains(v))
            && opt(regex, |r| r.is_match(&node.text))
            && opt(self.content_desc_equals.as_deref(), |v| node.content_desc == v)
            && opt(self.content_desc_contains.as_deref(), |v| node.content_desc.contains(v))
            && opt(self.resource_id_equals.as_deref(), |v| node.resource_id == v)
            && opt(self.resource_id_ends_with.as_deref(), |v| node.resource_id.ends_with(v))
            && opt(self.checked.as_ref(), |v| node.checked == *v)
            && opt(self.enabled.as_ref(), |v| node.enabled == *v)
    }

    /// Whether enough nodes of `tree` match. An invalid regex never matches.
    pub fn is_satisfied_by(&self, tree: &RawUiTree) -> bool {
        match_predicate(tree, self).len() >= self.min_count.unwrap_or(1).max(1)
    }
}

/// Every node satisfying all tests in `pred`, in pre-order.
pub fn match_predicate<'t>(tree: &'t RawUiTree, pred: &NodePredicate) -> Vec<&'t UiNode> {
    let regex = match pred.compiled_regex() {
        Ok(r) => r,
        Err(_) => return Vec::new(),
    };
    tree.iter().filter(|n| pred.matches_node(n, regex.as_ref())).collect()
}
