import sys

from gyroflow_services.cli import main


if __name__ == "__main__":
    sys.exit(main())
