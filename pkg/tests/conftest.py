import hypothesis
import pytest

from ehr_mcp.cohort import generate_cohort
from ehr_mcp.server import McpServer
from ehr_mcp.tools import ClinicalTools

from helpers import log_warehouse

hypothesis.settings.register_profile("ci", deadline=None)
hypothesis.settings.load_profile("ci")


@pytest.fixture(scope="session")
def cohort42():
    return generate_cohort(42, 8)


@pytest.fixture(scope="session")
def log_wh():
    return log_warehouse()


@pytest.fixture(scope="session")
def log_tools(log_wh):
    return ClinicalTools(log_wh)


@pytest.fixture(scope="session")
def server42(cohort42):
    return McpServer(ClinicalTools(cohort42))


@pytest.fixture(scope="session")
def warehouse_dir(tmp_path_factory, cohort42):
    from ehr_mcp.warehouse import write_warehouse

    root = tmp_path_factory.mktemp("wh42")
    write_warehouse(cohort42, root)
    return root
