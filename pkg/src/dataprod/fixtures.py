"""Shipped fixture database: a small retail schema with six joined tables.

The creation script is deterministic (modular-arithmetic data, no RNG), so
loading it always produces the same database file and every test that runs
against it is reproducible.
"""

from __future__ import annotations

import os
import sqlite3

FIXTURE_DIR = os.path.join(os.path.dirname(__file__), "fixtures")
RETAIL_SCRIPT_PATH = os.path.join(FIXTURE_DIR, "retail.sql")

_CITIES = ["Lyon", "Porto", "Graz", "Turku", "Leeds"]
_COUNTRIES = ["France", "Portugal", "Austria", "Finland", "Japan"]
_CATEGORIES = ["kitchen", "garden", "office", "outdoor"]
_STATUSES = ["placed", "paid", "shipped", "returned"]
_CARRIERS = ["nordpost", "cityexpress", "relayone"]


def build_retail_script() -> str:
    """Render the retail fixture as one DDL+INSERT script."""
    lines = [
        "-- retail fixture: 6 tables, deterministic contents",
        "CREATE TABLE customers (",
        "  customer_id INTEGER PRIMARY KEY,",
        "  name TEXT NOT NULL,",
        "  city TEXT,",
        "  signup_date DATE,",
        "  active BOOLEAN",
        ");",
        "CREATE TABLE suppliers (",
        "  supplier_id INTEGER PRIMARY KEY,",
        "  name TEXT NOT NULL,",
        "  country TEXT,",
        "  rating REAL",
        ");",
        "CREATE TABLE products (",
        "  product_id INTEGER PRIMARY KEY,",
        "  name TEXT NOT NULL,",
        "  category TEXT,",
        "  price REAL,",
        "  stock INTEGER,",
        "  supplier_id INTEGER REFERENCES suppliers(supplier_id)",
        ");",
        "CREATE TABLE orders (",
        "  order_id INTEGER PRIMARY KEY,",
        "  customer_id INTEGER REFERENCES customers(customer_id),",
        "  order_date DATE,",
        "  status TEXT,",
        "  total_amount REAL",
        ");",
        "CREATE TABLE order_items (",
        "  item_id INTEGER PRIMARY KEY,",
        "  order_id INTEGER REFERENCES orders(order_id),",
        "  product_id INTEGER REFERENCES products(product_id),",
        "  quantity INTEGER,",
        "  unit_price REAL",
        ");",
        "CREATE TABLE shipments (",
        "  shipment_id INTEGER PRIMARY KEY,",
        "  order_id INTEGER REFERENCES orders(order_id),",
        "  shipped_date DATE,",
        "  carrier TEXT,",
        "  weight REAL",
        ");",
    ]

    for i in range(1, 31):
        lines.append(
            "INSERT INTO customers VALUES "
            f"({i}, 'customer_{i:02d}', '{_CITIES[i % len(_CITIES)]}', "
            f"'2023-{(i % 12) + 1:02d}-{(i % 27) + 1:02d}', {i % 2});"
        )
    for i in range(1, 11):
        lines.append(
            "INSERT INTO suppliers VALUES "
            f"({i}, 'supplier_{i:02d}', '{_COUNTRIES[i % len(_COUNTRIES)]}', "
            f"{round(2.0 + (i * 7 % 30) / 10.0, 1)});"
        )
    for i in range(1, 21):
        lines.append(
            "INSERT INTO products VALUES "
            f"({i}, 'product_{i:02d}', '{_CATEGORIES[i % len(_CATEGORIES)]}', "
            f"{round(5.0 + (i * 13 % 90), 2)}, {(i * 11) % 50 + 5}, {(i % 10) + 1});"
        )
    for i in range(1, 61):
        lines.append(
            "INSERT INTO orders VALUES "
            f"({i}, {(i % 30) + 1}, '2024-{(i % 12) + 1:02d}-{(i % 27) + 1:02d}', "
            f"'{_STATUSES[i % len(_STATUSES)]}', {round(10.0 + (i * 17 % 400), 2)});"
        )
    for i in range(1, 151):
        lines.append(
            "INSERT INTO order_items VALUES "
            f"({i}, {(i % 60) + 1}, {(i % 20) + 1}, {(i % 5) + 1}, "
            f"{round(4.0 + (i * 3 % 60), 2)});"
        )
    for i in range(1, 46):
        lines.append(
            "INSERT INTO shipments VALUES "
            f"({i}, {(i % 60) + 1}, '2024-{(i % 12) + 1:02d}-{(i % 27) + 1:02d}', "
            f"'{_CARRIERS[i % len(_CARRIERS)]}', {round(0.2 + (i * 9 % 80) / 10.0, 2)});"
        )
    return "\n".join(lines) + "\n"


def write_retail_script(path: str = RETAIL_SCRIPT_PATH) -> str:
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(build_retail_script())
    return path


def build_retail_db(db_path: str) -> str:
    """Materialize the retail fixture as a SQLite file."""
    if os.path.exists(db_path):
        os.remove(db_path)
    conn = sqlite3.connect(db_path)
    try:
        conn.executescript(build_retail_script())
        conn.commit()
    finally:
        conn.close()
    return db_path
