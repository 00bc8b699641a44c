import sys
from cli.app import main

# Explicit imports for PyInstaller to detect dynamic imports
# These are not used directly but ensure modules are included in the bundle
if False:  # Never executed, but PyInstaller will scan these
    from impl.borell import BorellEuclidean, BorellSphere, Girsanov
    from impl.marginals import JacobiStationary, MarginalNu, Convergence
    from impl.brascamp_lieb import BrascampLieb, FrameLemma
    from impl.follmer import FollmerEuclidean, FollmerSphere, BridgeLaw
    from impl.logsob import LogSobolev, AlphaTrajectory

if __name__ == "__main__":
    sys.exit(main())
