//! Python source analysis on top of tree-sitter.

use tree_sitter::{Node, Parser, Tree};

use super::{ApiId, ApiUnit, CorpusError, SourceFile, Span};

pub(crate) fn parse(text: &str) -> Option<Tree> {
    let mut parser = Parser::new();
    parser
        .set_language(&tree_sitter_python::LANGUAGE.into())
        .expect("python grammar is compatible with the linked tree-sitter");
    parser.parse(text, None)
}

/// Parses `text` and rejects trees containing syntax errors.
pub(crate) fn parse_strict(text: &str) -> Result<Tree, String> {
    let tree = parse(text).ok_or_else(|| "parser produced no tree".to_string())?;
    let root = tree.root_node();
    if root.has_error() {
        let at = first_error(root).map(|n| n.start_position().row + 1).unwrap_or(1);
        return Err(format!("syntax error near line {at}"));
    }
    Ok(tree)
}

/// Syntax check; the error names the first offending line.
pub fn check_syntax(text: &str) -> Result<(), String> {
    parse_strict(text).map(|_| ())
}

fn first_error(node: Node<'_>) -> Option<Node<'_>> {
    if node.is_error() || node.is_missing() {
        return Some(node);
    }
    let mut cursor = node.walk();
    for child in node.children(&mut cursor) {
        if child.has_error() {
            if let Some(found) = first_error(child) {
                return Some(found);
            }
        }
    }
    None
}

pub(crate) fn text_of<'a>(node: Node<'_>, src: &'a str) -> &'a str {
    &src[node.byte_range()]
}

/// Dotted module name for a repository-relative path:
/// `pkg/sub/mod.py` → `pkg.sub.mod`, `pkg/__init__.py` → `pkg`.
pub fn module_name(path: &str) -> String {
    let trimmed = path.strip_suffix(".py").unwrap_or(path);
    let mut parts: Vec<&str> = trimmed.split('/').filter(|p| !p.is_empty()).collect();
    if parts.last() == Some(&"__init__") {
        parts.pop();
    }
    parts.join(".")
}

/// Removes the common leading whitespace of all non-blank lines.
pub fn dedent(text: &str) -> String {
    let indent =
        text.lines().filter(|l| !l.trim().is_empty()).map(|l| l.len() - l.trim_start().len()).min().unwrap_or(0);
    text.split_inclusive('\n')
        .map(|line| {
            if line.trim().is_empty() {
                line.trim_start_matches([' ', '\t'])
            } else {
                &line[indent.min(line.len())..]
            }
        })
        .collect()
}

/// Extracts one [`ApiUnit`] per top-level function and per class method, in
/// source order. Functions nested inside other functions are skipped.
pub fn extract_api_units(file: &SourceFile) -> Result<Vec<ApiUnit>, CorpusError> {
    let tree =
        parse_strict(&file.text).map_err(|diagnostic| CorpusError::Parse { path: file.path.clone(), diagnostic })?;
    let module = module_name(&file.path);
    let mut units = Vec::new();
    collect_scope(tree.root_node(), &module, file, &mut units);
    Ok(units)
}

fn collect_scope(scope: Node<'_>, prefix: &str, file: &SourceFile, out: &mut Vec<ApiUnit>) {
    let mut cursor = scope.walk();
    for child in scope.named_children(&mut cursor) {
        let (def, outer) = match child.kind() {
            "decorated_definition" => match child.child_by_field_name("definition") {
                Some(def) => (def, child),
                None => continue,
            },
            _ => (child, child),
        };
        match def.kind() {
            "function_definition" => out.push(make_unit(def, outer, prefix, file)),
            "class_definition" => {
                let Some(name) = def.child_by_field_name("name") else { continue };
                let Some(body) = def.child_by_field_name("body") else { continue };
                let qualified = format!("{prefix}.{}", text_of(name, &file.text));
                collect_scope(body, &qualified, file, out);
            }
            _ => {}
        }
    }
}

fn make_unit(def: Node<'_>, outer: Node<'_>, prefix: &str, file: &SourceFile) -> ApiUnit {
    let src = file.text.as_str();
    let name = def.child_by_field_name("name").map(|n| text_of(n, src)).unwrap_or("");
    let mut signature =
        def.child_by_field_name("parameters").map(|n| text_of(n, src).to_string()).unwrap_or_else(|| "()".into());
    if let Some(ret) = def.child_by_field_name("return_type") {
        signature.push_str(" -> ");
        signature.push_str(text_of(ret, src));
    }
    let qualified_name = if prefix.is_empty() { name.to_string() } else { format!("{prefix}.{name}") };
    let span = Span::new(outer.start_position().row + 1, outer.end_position().row + 1);
    let body = file.slice_lines(span).unwrap_or_else(|| text_of(outer, src).to_string());
    let doc = def.child_by_field_name("body").and_then(|b| docstring(b, src));
    ApiUnit {
        id: ApiId::derive(&file.path, &qualified_name, &signature),
        qualified_name,
        signature,
        doc,
        body,
        path: file.path.clone(),
        span,
    }
}

fn docstring(block: Node<'_>, src: &str) -> Option<String> {
    let first = block.named_child(0)?;
    if first.kind() != "expression_statement" {
        return None;
    }
    let literal = first.named_child(0)?;
    if literal.kind() != "string" {
        return None;
    }
    let cleaned = clean_docstring(text_of(literal, src));
    (!cleaned.is_empty()).then_some(cleaned)
}

fn clean_docstring(raw: &str) -> String {
    let unprefixed = raw.trim_start_matches(|c: char| "rRuUbBfF".contains(c));
    let inner = ["\"\"\"", "'''", "\"", "'"]
        .iter()
        .find_map(|q| unprefixed.strip_prefix(q).and_then(|s| s.strip_suffix(q)))
        .unwrap_or(unprefixed);
    let mut lines = inner.lines();
    let first = lines.next().unwrap_or("").trim().to_string();
    let rest: Vec<&str> = lines.collect();
    let indent =
        rest.iter().filter(|l| !l.trim().is_empty()).map(|l| l.len() - l.trim_start().len()).min().unwrap_or(0);
    let mut out = vec![first];
    out.extend(rest.iter().map(|l| l.get(indent..).unwrap_or("").trim_end().to_string()));
    while out.last().is_some_and(|l| l.is_empty()) {
        out.pop();
    }
    while out.first().is_some_and(|l| l.is_empty()) {
        out.remove(0);
    }
    out.join("\n")
}

/// Number of top-level function definitions in `source`, or `None` when it
/// does not parse.
pub fn count_top_level_definitions(source: &str) -> Option<usize> {
    let tree = parse_strict(source).ok()?;
    let root = tree.root_node();
    let mut cursor = root.walk();
    let count = root
        .named_children(&mut cursor)
        .filter(|n| match n.kind() {
            "function_definition" => true,
            "decorated_definition" => {
                n.child_by_field_name("definition").is_some_and(|d| d.kind() == "function_definition")
            }
            _ => false,
        })
        .count();
    Some(count)
}

/// Callee expressions of every call site in `root`, as dotted names, in
/// source order. Calls on computed receivers (`f().g()`, `a[0]()`) are
/// skipped.
pub(crate) fn call_targets(root: Node<'_>, src: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut stack = vec![root];
    let mut ordered = Vec::new();
    while let Some(node) = stack.pop() {
        if node.kind() == "call" {
            ordered.push(node);
        }
        let mut cursor = node.walk();
        let children: Vec<_> = node.named_children(&mut cursor).collect();
        stack.extend(children.into_iter().rev());
    }
    for call in ordered {
        if let Some(callee) = call.child_by_field_name("function").and_then(|f| dotted(f, src)) {
            out.push(callee);
        }
    }
    out
}

fn dotted(node: Node<'_>, src: &str) -> Option<String> {
    match node.kind() {
        "identifier" => Some(text_of(node, src).to_string()),
        "attribute" => {
            let object = dotted(node.child_by_field_name("object")?, src)?;
            let attr = text_of(node.child_by_field_name("attribute")?, src);
            Some(format!("{object}.{attr}"))
        }
        _ => None,
    }
}

/// Import bindings at module level: local name → fully qualified target.
pub(crate) fn import_bindings(root: Node<'_>, src: &str, module: &str, is_package: bool) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let mut cursor = root.walk();
    for stmt in root.named_children(&mut cursor) {
        match stmt.kind() {
            "import_statement" => {
                let mut c = stmt.walk();
                for name in stmt.children_by_field_name("name", &mut c) {
                    match name.kind() {
                        "dotted_name" => {
                            let full = text_of(name, src);
                            let head = full.split('.').next().unwrap_or(full);
                            out.push((head.to_string(), head.to_string()));
                        }
                        "aliased_import" => {
                            if let (Some(n), Some(a)) =
                                (name.child_by_field_name("name"), name.child_by_field_name("alias"))
                            {
                                out.push((text_of(a, src).to_string(), text_of(n, src).to_string()));
                            }
                        }
                        _ => {}
                    }
                }
            }
            "import_from_statement" => {
                let Some(module_node) = stmt.child_by_field_name("module_name") else { continue };
                let base = match module_node.kind() {
                    "relative_import" => resolve_relative(text_of(module_node, src), module, is_package),
                    _ => text_of(module_node, src).to_string(),
                };
                let mut c = stmt.walk();
                for name in stmt.children_by_field_name("name", &mut c) {
                    let (local, target) = match name.kind() {
                        "dotted_name" => {
                            let t = text_of(name, src);
                            (t.to_string(), t.to_string())
                        }
                        "aliased_import" => match (name.child_by_field_name("name"), name.child_by_field_name("alias"))
                        {
                            (Some(n), Some(a)) => (text_of(a, src).to_string(), text_of(n, src).to_string()),
                            _ => continue,
                        },
                        _ => continue,
                    };
                    let full = if base.is_empty() { target } else { format!("{base}.{target}") };
                    out.push((local, full));
                }
            }
            _ => {}
        }
    }
    out
}

fn resolve_relative(spec: &str, module: &str, is_package: bool) -> String {
    let dots = spec.chars().take_while(|&c| c == '.').count();
    let rest = &spec[dots..];
    let mut parts: Vec<&str> = module.split('.').filter(|p| !p.is_empty()).collect();
    // A module's own package is one level up; a package's is itself.
    let drop = if is_package { dots - 1 } else { dots };
    for _ in 0..drop {
        parts.pop();
    }
    if !rest.is_empty() {
        parts.push(rest);
    }
    parts.join(".")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn units(path: &str, text: &str) -> Vec<ApiUnit> {
        extract_api_units(&SourceFile::new(path, text)).unwrap()
    }

    #[test]
    fn functions_and_methods_in_source_order() {
        let src = "\
def a():
    return 1


def b(x, y=2):
    \"\"\"Adds.\"\"\"
    return x + y


class K:
    def __init__(self):
        self.v = 0

    def get(self):
        return self.v

    def set(self, v):
        self.v = v
";
        let found = units("pkg/m.py", src);
        let names: Vec<_> = found.iter().map(|u| u.qualified_name.as_str()).collect();
        assert_eq!(names, ["pkg.m.a", "pkg.m.b", "pkg.m.K.__init__", "pkg.m.K.get", "pkg.m.K.set"]);
        assert_eq!(found[1].signature, "(x, y=2)");
        assert_eq!(found[1].doc.as_deref(), Some("Adds."));
        assert_eq!(found[1].span, Span::new(5, 7));
    }

    #[test]
    fn missing_docstring_is_absent() {
        let found = units("m.py", "def f(x):\n    return x\n");
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].doc, None);
    }

    #[test]
    fn decorator_in_span_not_in_name() {
        let src =
            "import functools\n\n\n@functools.lru_cache(maxsize=None)\ndef cached(n: int) -> int:\n    return n * 2\n";
        let found = units("m.py", src);
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].qualified_name, "m.cached");
        assert_eq!(found[0].span, Span::new(4, 6));
        assert!(found[0].body.starts_with("@functools.lru_cache"));
        assert_eq!(found[0].signature, "(n: int) -> int");
    }

    #[test]
    fn nested_functions_excluded() {
        let src = "def outer():\n    def inner():\n        return 1\n    return inner()\n";
        let found = units("m.py", src);
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].qualified_name, "m.outer");
    }

    #[test]
    fn syntax_error_is_reported() {
        let err = extract_api_units(&SourceFile::new("bad.py", "def broken(:\n    pass\n")).unwrap_err();
        assert!(matches!(err, CorpusError::Parse { ref path, .. } if path == "bad.py"));
    }

    #[test]
    fn ids_are_stable() {
        let a = units("m.py", "def f(x):\n    return x\n");
        let b = units("m.py", "def f(x):\n    return x\n");
        assert_eq!(a[0].id, b[0].id);
        let c = units("n.py", "def f(x):\n    return x\n");
        assert_ne!(a[0].id, c[0].id);
    }

    #[test]
    fn multiline_docstring_is_cleaned() {
        let src = "def f():\n    \"\"\"Summary line.\n\n        Indented detail.\n    \"\"\"\n";
        let found = units("m.py", src);
        assert_eq!(found[0].doc.as_deref(), Some("Summary line.\n\nIndented detail."));
    }

    #[test]
    fn module_names() {
        assert_eq!(module_name("pkg/sub/mod.py"), "pkg.sub.mod");
        assert_eq!(module_name("pkg/__init__.py"), "pkg");
        assert_eq!(module_name("top.py"), "top");
    }

    #[test]
    fn relative_imports_resolve() {
        let src = "from . import utils\nfrom ..core import base as b\nimport os.path\nimport numpy as np\n";
        let tree = parse(src).unwrap();
        let got = import_bindings(tree.root_node(), src, "pkg.sub.mod", false);
        assert_eq!(
            got,
            vec![
                ("utils".to_string(), "pkg.sub.utils".to_string()),
                ("b".to_string(), "pkg.core.base".to_string()),
                ("os".to_string(), "os".to_string()),
                ("np".to_string(), "numpy".to_string()),
            ]
        );
    }

    #[test]
    fn dedent_strips_common_indent() {
        assert_eq!(dedent("    def f():\n        return 1\n"), "def f():\n    return 1\n");
    }
}
