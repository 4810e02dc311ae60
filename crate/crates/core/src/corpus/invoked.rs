use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::python::{call_targets, dedent, import_bindings, module_name, parse, parse_strict};
use super::{ApiId, ApiUnit, SourceFile};

/// Name-resolution environment for call sites inside one file: the module,
/// the enclosing class (for `self.x()` / `cls.x()`) and module-level imports.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ResolutionScope {
    pub module: String,
    pub class: Option<String>,
    pub aliases: BTreeMap<String, String>,
}

impl ResolutionScope {
    pub fn for_module(module: impl Into<String>) -> Self {
        ResolutionScope { module: module.into(), ..Default::default() }
    }

    /// Scope of `file`, with its import bindings followed one level deep.
    pub fn for_file(file: &SourceFile) -> Self {
        let module = module_name(&file.path);
        let mut scope = Self::for_module(module.clone());
        if let Some(tree) = parse(&file.text) {
            let is_package = file.path.ends_with("__init__.py");
            for (local, target) in import_bindings(tree.root_node(), &file.text, &module, is_package) {
                scope.aliases.insert(local, target);
            }
        }
        scope
    }

    pub fn with_class(mut self, class: Option<String>) -> Self {
        self.class = class;
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InvokedApis {
    pub ids: BTreeSet<ApiId>,
    /// The reference did not parse; `ids` is empty.
    pub unparsable: bool,
}

/// Resolves the repository APIs called by `reference` against `api_table`.
///
/// Resolution is static and name based: import aliases are expanded, `self`
/// and `cls` bind to the enclosing class, a call to a class resolves to its
/// `__init__`, and a dotted callee with at least two segments may match a
/// unique qualified-name suffix. Anything else (builtins, third-party calls,
/// attribute calls on unknown receivers) is dropped.
pub fn extract_invoked_apis(reference: &str, api_table: &[ApiUnit], scope: &ResolutionScope) -> InvokedApis {
    let source = dedent(reference);
    let tree = match parse_strict(&source) {
        Ok(tree) => tree,
        Err(_) => return InvokedApis { ids: BTreeSet::new(), unparsable: true },
    };
    let by_name: HashMap<&str, &ApiUnit> = api_table.iter().map(|u| (u.qualified_name.as_str(), u)).collect();
    let mut ids = BTreeSet::new();
    for callee in call_targets(tree.root_node(), &source) {
        if let Some(unit) = resolve(&callee, scope, &by_name, api_table) {
            ids.insert(unit.id.clone());
        }
    }
    InvokedApis { ids, unparsable: false }
}

fn resolve<'a>(
    callee: &str,
    scope: &ResolutionScope,
    by_name: &HashMap<&str, &'a ApiUnit>,
    table: &'a [ApiUnit],
) -> Option<&'a ApiUnit> {
    let segments: Vec<&str> = callee.split('.').collect();
    let head = segments[0];
    let mut candidates = Vec::new();

    if (head == "self" || head == "cls") && segments.len() == 2 {
        if let Some(class) = &scope.class {
            candidates.push(format!("{class}.{}", segments[1]));
        }
    } else if let Some(target) = scope.aliases.get(head) {
        let mut full = target.clone();
        for seg in &segments[1..] {
            full.push('.');
            full.push_str(seg);
        }
        candidates.push(full);
    } else {
        candidates.push(format!("{}.{callee}", scope.module));
        if segments.len() > 1 {
            candidates.push(callee.to_string());
        }
    }

    for name in &candidates {
        if let Some(unit) = by_name.get(name.as_str()) {
            return Some(unit);
        }
        if let Some(unit) = by_name.get(format!("{name}.__init__").as_str()) {
            return Some(unit);
        }
    }

    if segments.len() >= 2 && head != "self" && head != "cls" {
        let tail = segments[segments.len() - 2..].join(".");
        return unique_suffix(table, &tail).or_else(|| unique_suffix(table, &format!("{tail}.__init__")));
    }
    None
}

fn unique_suffix<'a>(table: &'a [ApiUnit], tail: &str) -> Option<&'a ApiUnit> {
    let dotted = format!(".{tail}");
    let mut found = table.iter().filter(|u| u.qualified_name == tail || u.qualified_name.ends_with(&dotted));
    let first = found.next()?;
    found.next().is_none().then_some(first)
}
