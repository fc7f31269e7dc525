"""SQL analysis: reference extraction, structural features, view rewriting.

Supported subset: SELECT projections, FROM with INNER/LEFT JOIN ... ON
equality chains, WHERE conjunctions of comparisons (plus IN and IS NULL),
GROUP BY, HAVING, ORDER BY, LIMIT, scalar and IN subqueries, UNION [ALL].
Anything outside the subset raises SqlParseError rather than producing a
wrong coverage reading.

All identifier resolution is case-insensitive. References that go through a
view are expanded to the view's underlying base tables and columns, so
coverage metrics always see the real schema footprint.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

from .errors import PatternMismatchError, SqlParseError, UnresolvedIdentifierError
from .state import QueryAnalysis, TableMeta, ViewDef

AGGREGATES = {"sum", "count", "avg", "min", "max"}

KEYWORDS = {
    "select", "distinct", "from", "join", "inner", "left", "outer", "on",
    "where", "group", "by", "having", "order", "limit", "union", "all",
    "and", "in", "not", "is", "null", "as", "asc", "desc",
}

INNER_JOIN_MARK = "⋈"   # tableA⋈tableB
LEFT_JOIN_MARK = "⟕"    # tableA⟕tableB (left join keeps its direction)


# --- lexer ------------------------------------------------------------------

@dataclass(frozen=True)
class Token:
    kind: str  # ident | number | string | op | punct
    value: str

    @property
    def lower(self) -> str:
        return self.value.lower()


_OPS = ("<>", "<=", ">=", "!=", "=", "<", ">", "+", "-", "*", "/")
_PUNCT = "(),.;"


def tokenize(sql: str) -> list[Token]:
    tokens: list[Token] = []
    i, n = 0, len(sql)
    while i < n:
        ch = sql[i]
        if ch.isspace():
            i += 1
            continue
        if sql.startswith("--", i):
            nl = sql.find("\n", i)
            i = n if nl == -1 else nl + 1
            continue
        if sql.startswith("/*", i):
            end = sql.find("*/", i + 2)
            if end == -1:
                raise SqlParseError("unterminated block comment")
            i = end + 2
            continue
        if ch == "'":
            j = i + 1
            while j < n:
                if sql[j] == "'":
                    if j + 1 < n and sql[j + 1] == "'":  # escaped quote
                        j += 2
                        continue
                    break
                j += 1
            else:
                raise SqlParseError("unterminated string literal")
            tokens.append(Token("string", sql[i:j + 1]))
            i = j + 1
            continue
        if ch.isdigit():
            j = i
            while j < n and (sql[j].isdigit() or sql[j] == "."):
                j += 1
            tokens.append(Token("number", sql[i:j]))
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (sql[j].isalnum() or sql[j] == "_"):
                j += 1
            tokens.append(Token("ident", sql[i:j]))
            i = j
            continue
        matched = False
        for op in _OPS:
            if sql.startswith(op, i):
                tokens.append(Token("op", op))
                i += len(op)
                matched = True
                break
        if matched:
            continue
        if ch in _PUNCT:
            tokens.append(Token("punct", ch))
            i += 1
            continue
        raise SqlParseError(f"unexpected character {ch!r} at offset {i}")
    return tokens


# --- AST --------------------------------------------------------------------

@dataclass
class ColumnRef:
    table: Optional[str]
    column: str
    # filled by the resolver:
    base: Optional[tuple[str, str]] = None     # (table_id, column name)
    relation_key: Optional[int] = None         # id of the owning scope relation
    is_select_alias: bool = False


@dataclass
class Literal:
    text: str


@dataclass
class Star:
    table: Optional[str] = None


@dataclass
class FuncCall:
    name: str
    star: bool = False
    args: list = field(default_factory=list)


@dataclass
class UnaryMinus:
    operand: object


@dataclass
class BinOp:
    op: str
    left: object
    right: object


@dataclass
class Comparison:
    op: str
    left: object
    right: object


@dataclass
class InPred:
    expr: object
    negated: bool
    subquery: Optional["Query"] = None
    items: Optional[list] = None


@dataclass
class IsNullPred:
    expr: object
    negated: bool


@dataclass
class AndChain:
    parts: list


@dataclass
class ScalarSubquery:
    query: "Query"


@dataclass
class SelectItem:
    expr: object
    alias: Optional[str] = None


@dataclass
class TableRef:
    name: str
    alias: Optional[str] = None


@dataclass
class Join:
    kind: str  # "inner" | "left"
    table: TableRef
    conditions: list  # list[tuple[ColumnRef, ColumnRef]]


@dataclass
class Select:
    items: list
    from_ref: TableRef
    joins: list
    where: Optional[object] = None
    group_by: list = field(default_factory=list)
    having: Optional[object] = None
    distinct: bool = False


@dataclass
class Query:
    selects: list
    set_ops: list  # "union" | "union all", aligned with selects[1:]
    order_by: list = field(default_factory=list)  # (expr, "ASC"|"DESC"|None)
    limit: Optional[int] = None


# --- parser -----------------------------------------------------------------

class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.pos = 0

    def peek(self, ahead: int = 0) -> Optional[Token]:
        idx = self.pos + ahead
        return self.tokens[idx] if idx < len(self.tokens) else None

    def next(self) -> Token:
        tok = self.peek()
        if tok is None:
            raise SqlParseError("unexpected end of input")
        self.pos += 1
        return tok

    def at_keyword(self, *words: str) -> bool:
        tok = self.peek()
        return tok is not None and tok.kind == "ident" and tok.lower in words

    def accept_keyword(self, word: str) -> bool:
        if self.at_keyword(word):
            self.pos += 1
            return True
        return False

    def expect_keyword(self, word: str) -> None:
        if not self.accept_keyword(word):
            tok = self.peek()
            got = tok.value if tok else "end of input"
            raise SqlParseError(f"expected {word.upper()}, got {got!r}")

    def accept_punct(self, ch: str) -> bool:
        tok = self.peek()
        if tok is not None and tok.kind == "punct" and tok.value == ch:
            self.pos += 1
            return True
        return False

    def expect_punct(self, ch: str) -> None:
        if not self.accept_punct(ch):
            tok = self.peek()
            got = tok.value if tok else "end of input"
            raise SqlParseError(f"expected {ch!r}, got {got!r}")

    def expect_ident(self) -> str:
        tok = self.next()
        if tok.kind != "ident":
            raise SqlParseError(f"expected identifier, got {tok.value!r}")
        if tok.lower in KEYWORDS:
            raise SqlParseError(f"unexpected keyword {tok.value!r}")
        return tok.value

    # -- query ---------------------------------------------------------------

    def parse_query(self) -> Query:
        selects = [self.parse_select()]
        set_ops: list[str] = []
        while self.at_keyword("union"):
            self.next()
            if self.accept_keyword("all"):
                set_ops.append("union all")
            else:
                set_ops.append("union")
            selects.append(self.parse_select())
        order_by = []
        if self.accept_keyword("order"):
            self.expect_keyword("by")
            while True:
                expr = self.parse_expr()
                direction = None
                if self.accept_keyword("asc"):
                    direction = "ASC"
                elif self.accept_keyword("desc"):
                    direction = "DESC"
                order_by.append((expr, direction))
                if not self.accept_punct(","):
                    break
        limit = None
        if self.accept_keyword("limit"):
            tok = self.next()
            if tok.kind != "number" or "." in tok.value:
                raise SqlParseError(f"LIMIT expects an integer, got {tok.value!r}")
            limit = int(tok.value)
        return Query(selects, set_ops, order_by, limit)

    def parse_select(self) -> Select:
        self.expect_keyword("select")
        distinct = self.accept_keyword("distinct")
        items = [self.parse_select_item()]
        while self.accept_punct(","):
            items.append(self.parse_select_item())
        self.expect_keyword("from")
        from_ref = self.parse_table_ref()
        joins = []
        while True:
            if self.at_keyword("join") or self.at_keyword("inner") or self.at_keyword("left"):
                joins.append(self.parse_join())
            else:
                break
        where = None
        if self.accept_keyword("where"):
            where = self.parse_condition()
        group_by: list = []
        if self.accept_keyword("group"):
            self.expect_keyword("by")
            group_by.append(self.parse_expr())
            while self.accept_punct(","):
                group_by.append(self.parse_expr())
        having = None
        if self.accept_keyword("having"):
            having = self.parse_condition()
        return Select(items, from_ref, joins, where, group_by, having, distinct)

    def parse_select_item(self):
        tok = self.peek()
        if tok is not None and tok.kind == "op" and tok.value == "*":
            self.next()
            return Star(None)
        # qualified star: ident . *
        if (tok is not None and tok.kind == "ident"
                and self.peek(1) is not None and self.peek(1).value == "."
                and self.peek(2) is not None and self.peek(2).value == "*"):
            table = self.expect_ident()
            self.next()  # .
            self.next()  # *
            return Star(table)
        expr = self.parse_expr()
        alias = None
        if self.accept_keyword("as"):
            alias = self.expect_ident()
        else:
            nxt = self.peek()
            if nxt is not None and nxt.kind == "ident" and nxt.lower not in KEYWORDS:
                alias = self.expect_ident()
        return SelectItem(expr, alias)

    def parse_table_ref(self) -> TableRef:
        name = self.expect_ident()
        alias = None
        if self.accept_keyword("as"):
            alias = self.expect_ident()
        else:
            nxt = self.peek()
            if nxt is not None and nxt.kind == "ident" and nxt.lower not in KEYWORDS:
                alias = self.expect_ident()
        return TableRef(name, alias)

    def parse_join(self) -> Join:
        kind = "inner"
        if self.accept_keyword("left"):
            self.accept_keyword("outer")
            kind = "left"
        elif self.accept_keyword("inner"):
            pass
        self.expect_keyword("join")
        table = self.parse_table_ref()
        self.expect_keyword("on")
        conditions = [self.parse_join_equality()]
        while self.accept_keyword("and"):
            conditions.append(self.parse_join_equality())
        return Join(kind, table, conditions)

    def parse_join_equality(self) -> tuple[ColumnRef, ColumnRef]:
        left = self.parse_column_ref()
        tok = self.next()
        if tok.value != "=":
            raise SqlParseError(f"join conditions must be equalities, got {tok.value!r}")
        right = self.parse_column_ref()
        return (left, right)

    def parse_column_ref(self) -> ColumnRef:
        first = self.expect_ident()
        if self.peek() is not None and self.peek().value == "." :
            self.next()
            second = self.expect_ident()
            return ColumnRef(first, second)
        return ColumnRef(None, first)

    # -- conditions ------------------------------------------------------------

    def parse_condition(self):
        parts = [self.parse_predicate()]
        while self.accept_keyword("and"):
            parts.append(self.parse_predicate())
        return parts[0] if len(parts) == 1 else AndChain(parts)

    def parse_predicate(self):
        tok = self.peek()
        if (tok is not None and tok.value == "(" and
                not (self.peek(1) is not None and self.peek(1).lower == "select")):
            # try a parenthesized condition; fall back to an expression
            mark = self.pos
            try:
                self.next()
                inner = self.parse_condition()
                self.expect_punct(")")
                return inner
            except SqlParseError:
                self.pos = mark
        left = self.parse_expr()
        tok = self.peek()
        if tok is not None and tok.kind == "op" and tok.value in ("=", "!=", "<>", "<", "<=", ">", ">="):
            self.next()
            right = self.parse_expr()
            return Comparison(tok.value, left, right)
        if self.at_keyword("is"):
            self.next()
            negated = self.accept_keyword("not")
            self.expect_keyword("null")
            return IsNullPred(left, negated)
        negated = False
        if self.at_keyword("not"):
            self.next()
            negated = True
        if self.accept_keyword("in"):
            self.expect_punct("(")
            if self.at_keyword("select"):
                sub = self.parse_query()
                self.expect_punct(")")
                return InPred(left, negated, subquery=sub)
            items = [self.parse_expr()]
            while self.accept_punct(","):
                items.append(self.parse_expr())
            self.expect_punct(")")
            return InPred(left, negated, items=items)
        if negated:
            raise SqlParseError("NOT must be followed by IN")
        raise SqlParseError("expected a comparison, IS NULL, or IN predicate")

    # -- expressions -------------------------------------------------------------

    def parse_expr(self):
        node = self.parse_term()
        while True:
            tok = self.peek()
            if tok is not None and tok.kind == "op" and tok.value in ("+", "-"):
                self.next()
                node = BinOp(tok.value, node, self.parse_term())
            else:
                return node

    def parse_term(self):
        node = self.parse_factor()
        while True:
            tok = self.peek()
            if tok is not None and tok.kind == "op" and tok.value in ("*", "/"):
                self.next()
                node = BinOp(tok.value, node, self.parse_factor())
            else:
                return node

    def parse_factor(self):
        tok = self.peek()
        if tok is None:
            raise SqlParseError("unexpected end of expression")
        if tok.kind == "op" and tok.value == "-":
            self.next()
            return UnaryMinus(self.parse_factor())
        if tok.kind == "number" or tok.kind == "string":
            self.next()
            return Literal(tok.value)
        if tok.kind == "ident" and tok.lower == "null":
            self.next()
            return Literal("NULL")
        if tok.value == "(":
            if self.peek(1) is not None and self.peek(1).lower == "select":
                self.next()
                sub = self.parse_query()
                self.expect_punct(")")
                return ScalarSubquery(sub)
            self.next()
            inner = self.parse_expr()
            self.expect_punct(")")
            return inner
        if tok.kind == "ident":
            if self.peek(1) is not None and self.peek(1).value == "(":
                name = tok.lower
                if name not in AGGREGATES:
                    raise SqlParseError(f"unsupported function {tok.value!r}")
                self.next()
                self.next()  # (
                if self.peek() is not None and self.peek().value == "*":
                    self.next()
                    self.expect_punct(")")
                    return FuncCall(tok.value.upper(), star=True)
                args = [self.parse_expr()]
                while self.accept_punct(","):
                    args.append(self.parse_expr())
                self.expect_punct(")")
                return FuncCall(tok.value.upper(), args=args)
            return self.parse_column_ref()
        raise SqlParseError(f"unexpected token {tok.value!r} in expression")


def parse(sql_text: str) -> tuple[Query, int]:
    """Parse SQL, returning the AST and the lexer token count."""
    if not sql_text or not sql_text.strip():
        raise SqlParseError("empty SQL text")
    tokens = tokenize(sql_text)
    # a single trailing semicolon is tolerated
    if tokens and tokens[-1].value == ";":
        tokens = tokens[:-1]
    if not tokens:
        raise SqlParseError("empty SQL text")
    parser = _Parser(tokens)
    query = parser.parse_query()
    if parser.peek() is not None:
        raise SqlParseError(f"unexpected trailing token {parser.peek().value!r}")
    return query, len(tokens)


# --- catalog -----------------------------------------------------------------

@dataclass(frozen=True)
class TableInfo:
    table_id: str
    name: str
    columns: dict  # lower column name -> actual column name


@dataclass(frozen=True)
class ViewShape:
    view_id: str
    name: str
    outputs: dict  # lower output name -> (base table_id, base column name)
    output_order: tuple  # output names in projection order
    base_tables: frozenset
    join_base_columns: frozenset  # base (table_id, column) pairs from the view's ON clauses
    pattern_key: str


@dataclass(frozen=True)
class Catalog:
    tables: dict  # lower name -> TableInfo
    views: dict   # lower name -> ViewShape

    def for_tables_only(self) -> "Catalog":
        return Catalog(self.tables, {})


def build_catalog(tables: Iterable[TableMeta], views: Iterable[ViewDef] = ()) -> Catalog:
    table_map: dict[str, TableInfo] = {}
    for t in tables:
        info = TableInfo(t.table_id, t.name, {c.name.lower(): c.name for c in t.columns})
        table_map[t.name.lower()] = info
    catalog = Catalog(table_map, {})
    view_map: dict[str, ViewShape] = {}
    for v in views:
        view_map[v.name.lower()] = _shape_of_view(v, catalog)
    return Catalog(table_map, view_map)


def _shape_of_view(view: ViewDef, tables_catalog: Catalog) -> ViewShape:
    """Derive a view's output-to-base mapping by analyzing its own SQL."""
    query, _ = parse(view.sql_text)
    if len(query.selects) != 1:
        raise SqlParseError(f"view {view.name!r} must be a single SELECT")
    resolved = _Resolver(tables_catalog).resolve(query)
    select = query.selects[0]
    outputs: dict[str, tuple[str, str]] = {}
    order: list[str] = []
    for item in select.items:
        if isinstance(item, Star):
            raise SqlParseError(f"view {view.name!r} must use an explicit projection")
        if not isinstance(item.expr, ColumnRef) or item.expr.base is None:
            raise SqlParseError(f"view {view.name!r} projections must be plain columns")
        out_name = item.alias or item.expr.column
        key = out_name.lower()
        if key in outputs:
            raise SqlParseError(f"view {view.name!r} has duplicate output {out_name!r}")
        outputs[key] = item.expr.base
        order.append(out_name)
    join_cols = frozenset(
        ref.base for join in select.joins for pair in join.conditions for ref in pair
        if ref.base is not None
    )
    return ViewShape(
        view_id=view.view_id,
        name=view.name,
        outputs=outputs,
        output_order=tuple(order),
        base_tables=resolved.referenced_tables,
        join_base_columns=join_cols,
        pattern_key=resolved.pattern_key,
    )


# --- resolver ----------------------------------------------------------------

@dataclass
class _Relation:
    key: int
    alias: str            # lower-cased binding name in the FROM clause
    kind: str             # "table" | "view"
    table: Optional[TableInfo] = None
    view: Optional[ViewShape] = None

    @property
    def display_name(self) -> str:
        return (self.table.name if self.kind == "table" else self.view.name)

    def has_column(self, name: str) -> bool:
        lowered = name.lower()
        if self.kind == "table":
            return lowered in self.table.columns
        return lowered in self.view.outputs

    def base_of(self, name: str) -> tuple[str, str]:
        lowered = name.lower()
        if self.kind == "table":
            return (self.table.table_id, self.table.columns[lowered])
        return self.view.outputs[lowered]


@dataclass
class _Resolved:
    referenced_tables: frozenset
    referenced_columns: frozenset
    join_count: int
    subquery_depth: int
    aggregate_count: int
    has_group_by: bool
    has_having: bool
    set_op_count: int
    pattern_key: str
    top_relations: list  # relations of the first top-level select


class _Resolver:
    """Resolves identifiers against the catalog and gathers analysis facts."""

    def __init__(self, catalog: Catalog):
        self.catalog = catalog
        self.tables: set[str] = set()
        self.columns: set[tuple[str, str]] = set()
        self.join_count = 0
        self.aggregate_count = 0
        self.has_group_by = False
        self.has_having = False
        self.set_op_count = 0
        self.max_depth = 0
        self._next_key = 0

    def resolve(self, query: Query) -> _Resolved:
        top_relations = self._resolve_query(query, parent_scopes=[], depth=0)
        pattern = join_pattern_key(query)
        return _Resolved(
            referenced_tables=frozenset(self.tables),
            referenced_columns=frozenset(self.columns),
            join_count=self.join_count,
            subquery_depth=self.max_depth,
            aggregate_count=self.aggregate_count,
            has_group_by=self.has_group_by,
            has_having=self.has_having,
            set_op_count=self.set_op_count,
            pattern_key=pattern,
            top_relations=top_relations,
        )

    def _make_relation(self, ref: TableRef) -> _Relation:
        name = ref.name.lower()
        self._next_key += 1
        key = self._next_key
        if name in self.catalog.tables:
            info = self.catalog.tables[name]
            rel = _Relation(key, (ref.alias or ref.name).lower(), "table", table=info)
            self.tables.add(info.table_id)
            return rel
        if name in self.catalog.views:
            shape = self.catalog.views[name]
            rel = _Relation(key, (ref.alias or ref.name).lower(), "view", view=shape)
            # using a view exercises its underlying join and tables
            self.tables.update(shape.base_tables)
            self.columns.update(shape.join_base_columns)
            return rel
        raise UnresolvedIdentifierError(f"unknown table or view {ref.name!r}")

    def _resolve_query(self, query: Query, parent_scopes: list, depth: int) -> list:
        self.max_depth = max(self.max_depth, depth)
        self.set_op_count += len(query.set_ops)
        first_relations: list = []
        for idx, select in enumerate(query.selects):
            relations = self._resolve_select(select, parent_scopes, depth)
            if idx == 0:
                first_relations = relations
                # ORDER BY / LIMIT belong to the whole query; resolve ORDER BY
                # in the first select's scope, allowing select-item aliases.
                aliases = {
                    item.alias.lower()
                    for item in select.items
                    if isinstance(item, SelectItem) and item.alias
                }
                for expr, _direction in query.order_by:
                    self._resolve_expr(expr, [relations] + parent_scopes, depth,
                                       select_aliases=aliases)
        return first_relations

    def _resolve_select(self, select: Select, parent_scopes: list, depth: int) -> list:
        relations = [self._make_relation(select.from_ref)]
        for join in select.joins:
            self.join_count += 1
            relations.append(self._make_relation(join.table))
        seen_aliases: set[str] = set()
        for rel in relations:
            if rel.alias in seen_aliases:
                raise SqlParseError(f"duplicate relation alias {rel.alias!r}")
            seen_aliases.add(rel.alias)
        scopes = [relations] + parent_scopes

        for join in select.joins:
            for left, right in join.conditions:
                self._resolve_column(left, scopes)
                self._resolve_column(right, scopes)
        select_aliases = {
            item.alias.lower()
            for item in select.items
            if isinstance(item, SelectItem) and item.alias
        }
        for item in select.items:
            if isinstance(item, Star):
                self._resolve_star(item, relations)
            else:
                self._resolve_expr(item.expr, scopes, depth)
        if select.where is not None:
            self._resolve_condition(select.where, scopes, depth)
        for expr in select.group_by:
            self._resolve_expr(expr, scopes, depth, select_aliases=select_aliases)
        if select.group_by:
            self.has_group_by = True
        if select.having is not None:
            self.has_having = True
            self._resolve_condition(select.having, scopes, depth,
                                    select_aliases=select_aliases)
        return relations

    def _resolve_star(self, star: Star, relations: list) -> None:
        targets = relations
        if star.table is not None:
            lowered = star.table.lower()
            targets = [r for r in relations if r.alias == lowered]
            if not targets:
                raise UnresolvedIdentifierError(f"unknown relation {star.table!r} for *")
        for rel in targets:
            if rel.kind == "table":
                for actual in rel.table.columns.values():
                    self.columns.add((rel.table.table_id, actual))
            else:
                for base in rel.view.outputs.values():
                    self.columns.add(base)

    def _resolve_condition(self, cond, scopes: list, depth: int,
                           select_aliases: Optional[set] = None) -> None:
        if isinstance(cond, AndChain):
            for part in cond.parts:
                self._resolve_condition(part, scopes, depth, select_aliases)
        elif isinstance(cond, Comparison):
            self._resolve_expr(cond.left, scopes, depth, select_aliases)
            self._resolve_expr(cond.right, scopes, depth, select_aliases)
        elif isinstance(cond, IsNullPred):
            self._resolve_expr(cond.expr, scopes, depth, select_aliases)
        elif isinstance(cond, InPred):
            self._resolve_expr(cond.expr, scopes, depth, select_aliases)
            if cond.subquery is not None:
                self._resolve_query(cond.subquery, scopes, depth + 1)
            else:
                for item in cond.items or []:
                    self._resolve_expr(item, scopes, depth, select_aliases)
        else:  # pragma: no cover - grammar prevents other nodes
            raise SqlParseError(f"unexpected condition node {type(cond).__name__}")

    def _resolve_expr(self, expr, scopes: list, depth: int,
                      select_aliases: Optional[set] = None) -> None:
        if isinstance(expr, ColumnRef):
            self._resolve_column(expr, scopes, select_aliases)
        elif isinstance(expr, Literal):
            pass
        elif isinstance(expr, UnaryMinus):
            self._resolve_expr(expr.operand, scopes, depth, select_aliases)
        elif isinstance(expr, BinOp):
            self._resolve_expr(expr.left, scopes, depth, select_aliases)
            self._resolve_expr(expr.right, scopes, depth, select_aliases)
        elif isinstance(expr, FuncCall):
            self.aggregate_count += 1
            for arg in expr.args:
                self._resolve_expr(arg, scopes, depth, select_aliases)
        elif isinstance(expr, ScalarSubquery):
            self._resolve_query(expr.query, scopes, depth + 1)
        else:  # pragma: no cover
            raise SqlParseError(f"unexpected expression node {type(expr).__name__}")

    def _resolve_column(self, ref: ColumnRef, scopes: list,
                        select_aliases: Optional[set] = None) -> None:
        if ref.table is not None:
            lowered = ref.table.lower()
            for relations in scopes:
                for rel in relations:
                    if rel.alias == lowered:
                        if not rel.has_column(ref.column):
                            raise UnresolvedIdentifierError(
                                f"column {ref.column!r} not found in {rel.display_name!r}")
                        ref.base = rel.base_of(ref.column)
                        ref.relation_key = rel.key
                        self.columns.add(ref.base)
                        return
            raise UnresolvedIdentifierError(f"unknown relation {ref.table!r}")
        for relations in scopes:
            for rel in relations:
                if rel.has_column(ref.column):
                    ref.base = rel.base_of(ref.column)
                    ref.relation_key = rel.key
                    self.columns.add(ref.base)
                    return
        if select_aliases and ref.column.lower() in select_aliases:
            ref.is_select_alias = True  # refers to a projection, not the schema
            return
        raise UnresolvedIdentifierError(f"unresolved column {ref.column!r}")


# --- pattern keys -------------------------------------------------------------

def join_pattern_key(query: Query) -> str:
    """Canonical key over the top-level first SELECT's join atoms.

    Inner-join atoms are symmetric and get their sides sorted; left joins keep
    their direction and use a distinct connective so an inner and a left join
    over the same columns never share a key.
    """
    select = query.selects[0]
    atoms: list[str] = []
    for join in select.joins:
        mark = INNER_JOIN_MARK if join.kind == "inner" else LEFT_JOIN_MARK
        for left, right in join.conditions:
            lt, lc = _atom_side(left)
            rt, rc = _atom_side(right)
            if join.kind == "inner" and (rt, rc) < (lt, lc):
                lt, lc, rt, rc = rt, rc, lt, lc
            atoms.append(f"{lt}{mark}{rt} ON {lc}={rc}")
    return ";".join(sorted(atoms))


def _atom_side(ref: ColumnRef) -> tuple[str, str]:
    if ref.base is not None:
        return (ref.base[0].lower(), ref.base[1].lower())
    return ((ref.table or "").lower(), ref.column.lower())


# --- public analysis ----------------------------------------------------------

def analyze(sql_text: str, catalog: Catalog) -> QueryAnalysis:
    """Parse and resolve SQL, returning its structural analysis.

    Raises SqlParseError for out-of-subset SQL and UnresolvedIdentifierError
    for names absent from the catalog.
    """
    query, token_count = parse(sql_text)
    resolved = _Resolver(catalog).resolve(query)
    return QueryAnalysis(
        referenced_tables=resolved.referenced_tables,
        referenced_columns=resolved.referenced_columns,
        token_count=token_count,
        join_count=resolved.join_count,
        subquery_depth=resolved.subquery_depth,
        aggregate_count=resolved.aggregate_count,
        has_group_by=resolved.has_group_by,
        has_having=resolved.has_having,
        set_op_count=resolved.set_op_count,
        join_pattern_key=resolved.pattern_key,
    )


@dataclass(frozen=True)
class ComplexityWeights:
    join: float = 2.0
    subquery: float = 3.0
    aggregate: float = 1.0
    group_by: float = 1.0
    having: float = 1.0
    set_op: float = 2.0


DEFAULT_COMPLEXITY_WEIGHTS = ComplexityWeights()


def complexity_score(analysis: QueryAnalysis,
                     weights: ComplexityWeights = DEFAULT_COMPLEXITY_WEIGHTS) -> float:
    return (
        1.0
        + weights.join * analysis.join_count
        + weights.subquery * analysis.subquery_depth
        + weights.aggregate * analysis.aggregate_count
        + weights.group_by * (1.0 if analysis.has_group_by else 0.0)
        + weights.having * (1.0 if analysis.has_having else 0.0)
        + weights.set_op * analysis.set_op_count
    )


# --- rendering ----------------------------------------------------------------

def render_query(query: Query) -> str:
    parts = [render_select(query.selects[0])]
    for op, select in zip(query.set_ops, query.selects[1:]):
        parts.append(op.upper())
        parts.append(render_select(select))
    sql = " ".join(parts)
    if query.order_by:
        rendered = ", ".join(
            render_expr(expr) + (f" {direction}" if direction else "")
            for expr, direction in query.order_by
        )
        sql += f" ORDER BY {rendered}"
    if query.limit is not None:
        sql += f" LIMIT {query.limit}"
    return sql


def render_select(select: Select) -> str:
    items = ", ".join(_render_item(item) for item in select.items)
    head = "SELECT DISTINCT" if select.distinct else "SELECT"
    sql = f"{head} {items} FROM {_render_table_ref(select.from_ref)}"
    for join in select.joins:
        kw = "JOIN" if join.kind == "inner" else "LEFT JOIN"
        conds = " AND ".join(
            f"{render_expr(l)} = {render_expr(r)}" for l, r in join.conditions
        )
        sql += f" {kw} {_render_table_ref(join.table)} ON {conds}"
    if select.where is not None:
        sql += f" WHERE {render_condition(select.where)}"
    if select.group_by:
        sql += " GROUP BY " + ", ".join(render_expr(e) for e in select.group_by)
    if select.having is not None:
        sql += f" HAVING {render_condition(select.having)}"
    return sql


def _render_table_ref(ref: TableRef) -> str:
    return f"{ref.name} AS {ref.alias}" if ref.alias else ref.name


def _render_item(item) -> str:
    if isinstance(item, Star):
        return f"{item.table}.*" if item.table else "*"
    rendered = render_expr(item.expr)
    return f"{rendered} AS {item.alias}" if item.alias else rendered


def render_condition(cond) -> str:
    if isinstance(cond, AndChain):
        return " AND ".join(render_condition(p) for p in cond.parts)
    if isinstance(cond, Comparison):
        return f"{render_expr(cond.left)} {cond.op} {render_expr(cond.right)}"
    if isinstance(cond, IsNullPred):
        return f"{render_expr(cond.expr)} IS {'NOT ' if cond.negated else ''}NULL"
    if isinstance(cond, InPred):
        neg = "NOT " if cond.negated else ""
        if cond.subquery is not None:
            return f"{render_expr(cond.expr)} {neg}IN ({render_query(cond.subquery)})"
        inner = ", ".join(render_expr(e) for e in cond.items or [])
        return f"{render_expr(cond.expr)} {neg}IN ({inner})"
    raise SqlParseError(f"cannot render condition {type(cond).__name__}")  # pragma: no cover


def render_expr(expr) -> str:
    if isinstance(expr, ColumnRef):
        return f"{expr.table}.{expr.column}" if expr.table else expr.column
    if isinstance(expr, Literal):
        return expr.text
    if isinstance(expr, UnaryMinus):
        return f"-{render_expr(expr.operand)}"
    if isinstance(expr, BinOp):
        return f"{render_expr(expr.left)} {expr.op} {render_expr(expr.right)}"
    if isinstance(expr, FuncCall):
        if expr.star:
            return f"{expr.name}(*)"
        return f"{expr.name}({', '.join(render_expr(a) for a in expr.args)})"
    if isinstance(expr, ScalarSubquery):
        return f"({render_query(expr.query)})"
    raise SqlParseError(f"cannot render expression {type(expr).__name__}")  # pragma: no cover


# --- view construction and rewriting -------------------------------------------

def view_output_name(table_name: str, column_name: str) -> str:
    return f"{table_name.lower()}_{column_name.lower()}"


def build_join_view_sql(exemplar_sql: str, catalog: Catalog) -> str:
    """Build view SQL that materializes the exemplar's join, projecting every
    column of every joined base table as ``<table>_<column>``."""
    query, _ = parse(exemplar_sql)
    resolved = _Resolver(catalog.for_tables_only()).resolve(query)
    select = query.selects[0]
    if not select.joins:
        raise PatternMismatchError("exemplar query has no join to materialize")
    items = []
    for rel in resolved.top_relations:
        if rel.kind != "table":
            raise PatternMismatchError("view exemplar must join base tables only")
        for lowered, actual in rel.table.columns.items():
            items.append(SelectItem(
                ColumnRef(rel.alias, actual),
                alias=view_output_name(rel.table.name, actual),
            ))
    view_select = Select(
        items=items,
        from_ref=select.from_ref,
        joins=select.joins,
    )
    return render_select(view_select)


def rewrite_with_view(sql_text: str, view: ViewDef, catalog: Catalog) -> str:
    """Rewrite a query to read from ``view`` instead of its matched join.

    Precondition: the query's join_pattern_key equals ``view.covers_pattern``.
    The rewritten query returns an identical result multiset on the same
    database.
    """
    shape = catalog.views.get(view.name.lower())
    if shape is None:
        raise PatternMismatchError(f"view {view.name!r} is not in the catalog")
    query, _ = parse(sql_text)
    resolved = _Resolver(catalog).resolve(query)
    if resolved.set_op_count:
        raise PatternMismatchError("cannot rewrite a set-operation query")
    if resolved.pattern_key != view.covers_pattern:
        raise PatternMismatchError(
            f"query pattern {resolved.pattern_key!r} does not match "
            f"view pattern {view.covers_pattern!r}")
    top = query.selects[0]
    top_keys = {rel.key for rel in resolved.top_relations}
    if any(rel.kind != "table" for rel in resolved.top_relations):
        raise PatternMismatchError("query already reads from a view")

    reverse: dict[tuple[str, str], str] = {}
    for out_lower, base in shape.outputs.items():
        reverse[base] = out_lower
    by_alias = {rel.alias: rel for rel in resolved.top_relations}

    def rewrite_ref(ref: ColumnRef) -> None:
        if ref.relation_key in top_keys and ref.base is not None:
            out = reverse.get(ref.base)
            if out is None:  # pragma: no cover - views project every column
                raise PatternMismatchError(
                    f"view {view.name!r} does not expose {ref.base}")
            ref.table = view.name
            ref.column = out
            ref.base = None

    def expand_star(star: Star) -> list:
        # qualified star over a replaced relation becomes explicit view columns
        rel = by_alias.get((star.table or "").lower())
        if rel is None:
            raise UnresolvedIdentifierError(f"unknown relation {star.table!r} for *")
        return [
            SelectItem(ColumnRef(view.name, view_output_name(rel.table.name, actual)))
            for actual in rel.table.columns.values()
        ]

    new_items: list = []
    for item in top.items:
        if isinstance(item, Star) and item.table is not None:
            new_items.extend(expand_star(item))
        else:
            new_items.append(item)
    top.items = new_items

    _walk_column_refs(query, rewrite_ref)
    top.from_ref = TableRef(view.name, None)
    top.joins = []
    return render_query(query)


def _walk_column_refs(node, visit) -> None:
    if isinstance(node, Query):
        for select in node.selects:
            _walk_column_refs(select, visit)
        for expr, _direction in node.order_by:
            _walk_column_refs(expr, visit)
    elif isinstance(node, Select):
        for item in node.items:
            if isinstance(item, SelectItem):
                _walk_column_refs(item.expr, visit)
        for join in node.joins:
            for left, right in join.conditions:
                visit(left)
                visit(right)
        if node.where is not None:
            _walk_column_refs(node.where, visit)
        for expr in node.group_by:
            _walk_column_refs(expr, visit)
        if node.having is not None:
            _walk_column_refs(node.having, visit)
    elif isinstance(node, ColumnRef):
        visit(node)
    elif isinstance(node, AndChain):
        for part in node.parts:
            _walk_column_refs(part, visit)
    elif isinstance(node, Comparison):
        _walk_column_refs(node.left, visit)
        _walk_column_refs(node.right, visit)
    elif isinstance(node, IsNullPred):
        _walk_column_refs(node.expr, visit)
    elif isinstance(node, InPred):
        _walk_column_refs(node.expr, visit)
        if node.subquery is not None:
            _walk_column_refs(node.subquery, visit)
        for item in node.items or []:
            _walk_column_refs(item, visit)
    elif isinstance(node, UnaryMinus):
        _walk_column_refs(node.operand, visit)
    elif isinstance(node, BinOp):
        _walk_column_refs(node.left, visit)
        _walk_column_refs(node.right, visit)
    elif isinstance(node, FuncCall):
        for arg in node.args:
            _walk_column_refs(arg, visit)
    elif isinstance(node, ScalarSubquery):
        _walk_column_refs(node.query, visit)
