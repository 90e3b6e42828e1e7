"""MCP server over a synthetic clinical warehouse, plus the retrieval benchmark that exercises it."""

from .cohort import generate_cohort
from .server import McpServer
from .tools import ClinicalTools, cockcroft_gault
from .warehouse import Warehouse, load_warehouse, write_warehouse

__all__ = [
    "ClinicalTools",
    "McpServer",
    "Warehouse",
    "cockcroft_gault",
    "generate_cohort",
    "load_warehouse",
    "write_warehouse",
]

__version__ = "0.1.0"
