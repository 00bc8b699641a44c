import os
import sys
import tempfile

# Workspace (logs, reports, run history) goes to a throwaway folder
os.environ["SCL_HOME"] = tempfile.mkdtemp(prefix="scl-tests-")
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))
