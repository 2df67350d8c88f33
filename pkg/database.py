from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker, declarative_base

from Services.config import database_url

# SQLite file-based database unless FAIRSSL_DATABASE_URL says otherwise
DATABASE_URL = database_url()

connect_args = {"check_same_thread": False} if DATABASE_URL.startswith("sqlite") else {}
engine = create_engine(DATABASE_URL, connect_args=connect_args)

SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=engine)

Base = declarative_base()
