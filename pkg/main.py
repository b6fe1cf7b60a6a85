import sys
import logging

from src.pipeline.cli import main

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

if __name__ == "__main__":
    sys.exit(main())
