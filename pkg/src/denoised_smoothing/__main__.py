"""Allow ``python -m denoised_smoothing``."""
import sys

from denoised_smoothing.main import main

if __name__ == '__main__':
    sys.exit(main())
