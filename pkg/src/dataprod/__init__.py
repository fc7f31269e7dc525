"""dataprod: a contract-driven control center that iteratively improves a
data product (schema metadata, questions, SQL, views, topics) against
user-defined quality targets, with full observability and human-in-the-loop
approval."""

__version__ = "0.1.0"
